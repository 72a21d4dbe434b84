//! Parameter checkpoints: a little-endian f64 blob plus a JSON sidecar with
//! names, shapes and optimizer state.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::tensor::Tensor;
use crate::Error;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerEntry {
    step_count: u64,
    learning_rate: f64,
    m_offset: u64,
    v_offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    params: Vec<ParamEntry>,
    optimizer: Option<OptimizerEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(buf: &[u8], offset: u64, count: usize) -> Result<Vec<f64>, Error> {
    let start = offset as usize;
    let end = start + count * 8;
    if end > buf.len() {
        return Err(Error::Checkpoint("blob shorter than sidecar claims".into()));
    }
    Ok(buf[start..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Saves named parameters (in list order) and optionally the Adam state.
pub fn save(
    path: &Path,
    named: &[(String, Tensor)],
    optimizer: Option<&AdamState>,
    meta: serde_json::Value,
) -> Result<(), Error> {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(named.len());
    for (name, t) in named {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
        });
        push_f64s(&mut blob, &t.value());
    }
    let optimizer = optimizer.map(|s| {
        let m_offset = blob.len() as u64;
        for m in &s.m {
            push_f64s(&mut blob, m);
        }
        let v_offset = blob.len() as u64;
        for v in &s.v {
            push_f64s(&mut blob, v);
        }
        OptimizerEntry {
            step_count: s.step_count,
            learning_rate: s.learning_rate,
            m_offset,
            v_offset,
        }
    });
    let sidecar = Sidecar { params: entries, optimizer, meta };
    let mut f = std::fs::File::create(path).map_err(|e| Error::Checkpoint(e.to_string()))?;
    f.write_all(&blob).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Checkpoint(e.to_string()))?,
    )
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(())
}

/// Result of loading a checkpoint.
pub struct Loaded {
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamState>,
    pub meta: serde_json::Value,
}

pub fn load(path: &Path) -> Result<Loaded, Error> {
    let blob = std::fs::read(path).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let sidecar: Sidecar = serde_json::from_str(
        &std::fs::read_to_string(path.with_extension("json"))
            .map_err(|e| Error::Checkpoint(e.to_string()))?,
    )
    .map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut params = Vec::with_capacity(sidecar.params.len());
    for entry in &sidecar.params {
        let count: usize = entry.shape.iter().product();
        let values = read_f64s(&blob, entry.offset, count)?;
        params.push((entry.name.clone(), Tensor::param(entry.shape.clone(), values)));
    }
    let optimizer = match sidecar.optimizer {
        Some(opt) => {
            let mut m = Vec::with_capacity(params.len());
            let mut v = Vec::with_capacity(params.len());
            let mut mo = opt.m_offset;
            let mut vo = opt.v_offset;
            for (_, t) in &params {
                m.push(read_f64s(&blob, mo, t.numel())?);
                mo += (t.numel() * 8) as u64;
                v.push(read_f64s(&blob, vo, t.numel())?);
                vo += (t.numel() * 8) as u64;
            }
            Some(AdamState {
                learning_rate: opt.learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                step_count: opt.step_count,
                m,
                v,
            })
        }
        None => None,
    };
    Ok(Loaded { params, optimizer, meta: sidecar.meta })
}
