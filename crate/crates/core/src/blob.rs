//! Binary-blob persistence: little-endian f32 payloads with a JSON sidecar
//! describing shapes and metadata. Complex tensors are stored interleaved
//! (re, im).

use ndarray::{Array2, Array4, ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One named field inside a blob file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobField {
    pub name: String,
    /// "c64_interleaved_f32" or "f32".
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Offset into the blob in bytes.
    pub offset: u64,
    /// Length in bytes.
    pub len: u64,
}

/// Sidecar contents written next to each `.bin` payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobSidecar {
    pub fields: Vec<BlobField>,
    pub seed: u64,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Incremental writer for a blob + sidecar pair.
pub struct BlobWriter {
    buf: Vec<u8>,
    fields: Vec<BlobField>,
}

impl BlobWriter {
    pub fn new() -> Self {
        BlobWriter { buf: Vec::new(), fields: Vec::new() }
    }

    pub fn push_complex(&mut self, name: &str, shape: &[usize], data: impl Iterator<Item = Complex64>) {
        let offset = self.buf.len() as u64;
        let mut count = 0usize;
        for v in data {
            self.buf.extend_from_slice(&(v.re as f32).to_le_bytes());
            self.buf.extend_from_slice(&(v.im as f32).to_le_bytes());
            count += 1;
        }
        debug_assert_eq!(count, shape.iter().product::<usize>());
        self.fields.push(BlobField {
            name: name.to_string(),
            dtype: "c64_interleaved_f32".to_string(),
            shape: shape.to_vec(),
            offset,
            len: self.buf.len() as u64 - offset,
        });
    }

    pub fn push_real(&mut self, name: &str, shape: &[usize], data: impl Iterator<Item = f64>) {
        let offset = self.buf.len() as u64;
        for v in data {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.fields.push(BlobField {
            name: name.to_string(),
            dtype: "f32".to_string(),
            shape: shape.to_vec(),
            offset,
            len: self.buf.len() as u64 - offset,
        });
    }

    pub fn write(self, path: &Path, seed: u64, meta: serde_json::Value) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.buf)?;
        let sidecar = BlobSidecar { fields: self.fields, seed, meta };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(path.with_extension("json"), json)?;
        Ok(())
    }
}

impl Default for BlobWriter {
    fn default() -> Self {
        Self::new()
    }
}

/// Reader over a blob + sidecar pair.
pub struct BlobReader {
    pub sidecar: BlobSidecar,
    data: Vec<u8>,
}

impl BlobReader {
    pub fn open(path: &Path) -> Result<Self> {
        let data = std::fs::read(path)?;
        let json = std::fs::read_to_string(path.with_extension("json"))?;
        let sidecar: BlobSidecar = serde_json::from_str(&json)?;
        Ok(BlobReader { sidecar, data })
    }

    fn field(&self, name: &str) -> Result<&BlobField> {
        self.sidecar
            .fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::config(format!("blob field '{name}' missing")))
    }

    pub fn read_complex(&self, name: &str) -> Result<ArrayD<Complex64>> {
        let field = self.field(name)?;
        if field.dtype != "c64_interleaved_f32" {
            return Err(Error::config(format!("field '{name}' is not complex")));
        }
        let bytes = &self.data[field.offset as usize..(field.offset + field.len) as usize];
        let n: usize = field.shape.iter().product();
        if bytes.len() != n * 8 {
            return Err(Error::shape(format!("field '{name}' length mismatch")));
        }
        let mut values = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(8) {
            let re = f32::from_le_bytes(chunk[0..4].try_into().unwrap()) as f64;
            let im = f32::from_le_bytes(chunk[4..8].try_into().unwrap()) as f64;
            values.push(Complex64::new(re, im));
        }
        ArrayD::from_shape_vec(IxDyn(&field.shape), values)
            .map_err(|e| Error::shape(e.to_string()))
    }

    pub fn read_real(&self, name: &str) -> Result<ArrayD<f64>> {
        let field = self.field(name)?;
        if field.dtype != "f32" {
            return Err(Error::config(format!("field '{name}' is not real")));
        }
        let bytes = &self.data[field.offset as usize..(field.offset + field.len) as usize];
        let n: usize = field.shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::shape(format!("field '{name}' length mismatch")));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        ArrayD::from_shape_vec(IxDyn(&field.shape), values)
            .map_err(|e| Error::shape(e.to_string()))
    }
}

/// Writes an error-statistics tensor plus its Frobenius-norm map as CSV for
/// visualization.
pub fn export_error_stats(
    stats: &Array4<Complex64>,
    fro: &Array2<f64>,
    dir: &Path,
    stem: &str,
    seed: u64,
    meta: serde_json::Value,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BlobWriter::new();
    let dim = stats.dim();
    w.push_complex("e", &[dim.0, dim.1, dim.2, dim.3], stats.iter().copied());
    w.write(&dir.join(format!("{stem}.bin")), seed, meta)?;

    let mut csv = String::from("subcarrier,symbol,frobenius\n");
    for f in 0..fro.dim().0 {
        for t in 0..fro.dim().1 {
            csv.push_str(&format!("{f},{t},{:.9e}\n", fro[(f, t)]));
        }
    }
    std::fs::write(dir.join(format!("{stem}_frobenius.csv")), csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_f32() {
        let dir = std::env::temp_dir().join(format!("mulink_blob_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.bin");
        let data: Vec<Complex64> =
            (0..24).map(|i| Complex64::new(i as f64 * 0.25, -(i as f64) * 0.5)).collect();
        let mut w = BlobWriter::new();
        w.push_complex("h", &[2, 3, 4], data.iter().copied());
        w.push_real("sigma2", &[1], std::iter::once(0.125));
        w.write(&path, 7, serde_json::json!({"kind": "test"})).unwrap();

        let r = BlobReader::open(&path).unwrap();
        assert_eq!(r.sidecar.seed, 7);
        let h = r.read_complex("h").unwrap();
        assert_eq!(h.shape(), &[2, 3, 4]);
        for (a, b) in h.iter().zip(&data) {
            // Values chosen representable in f32.
            assert_eq!(a, b);
        }
        let s = r.read_real("sigma2").unwrap();
        assert_eq!(s[[0]], 0.125);
        std::fs::remove_dir_all(&dir).ok();
    }
}
