//! LDPC encoding and sum-product belief-propagation decoding.
//!
//! Codes are defined by a sparse parity-check matrix, loaded from alist text
//! or expanded from the IEEE 802.11n base graph. Encoding is systematic: the
//! parity part of H is inverted over GF(2) at load time.

use crate::error::{Error, Result};

/// Message clamp for the tanh/atanh kernel.
const LLR_CLAMP: f64 = 30.0;

/// A binary LDPC code with a precomputed systematic encoder.
#[derive(Debug, Clone)]
pub struct LdpcCode {
    /// Code length.
    pub n: usize,
    /// Message length.
    pub k: usize,
    /// Check -> variable adjacency.
    pub row_nbrs: Vec<Vec<u32>>,
    /// Variable -> check adjacency.
    pub col_nbrs: Vec<Vec<u32>>,
    /// Parity generator P = H_B^{-1} H_A, bit-packed rows of length k.
    encoder: Vec<Vec<u64>>,
}

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn get_bit(row: &[u64], i: usize) -> bool {
    row[i / 64] >> (i % 64) & 1 == 1
}

fn set_bit(row: &mut [u64], i: usize) {
    row[i / 64] |= 1u64 << (i % 64);
}

fn xor_into(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

impl LdpcCode {
    /// Builds the code from check-node adjacency, validating degrees and
    /// deriving the systematic encoder (message bits first, parity last).
    pub fn from_adjacency(n: usize, row_nbrs: Vec<Vec<u32>>) -> Result<Self> {
        let m = row_nbrs.len();
        if m == 0 || m >= n {
            return Err(Error::config(format!("parity-check matrix {m} x {n} is degenerate")));
        }
        let k = n - m;
        let mut col_nbrs = vec![Vec::new(); n];
        for (r, nbrs) in row_nbrs.iter().enumerate() {
            for &v in nbrs {
                if v as usize >= n {
                    return Err(Error::config(format!("variable index {v} out of range")));
                }
                col_nbrs[v as usize].push(r as u32);
            }
        }
        if let Some(c) = col_nbrs.iter().position(|nb| nb.len() < 2) {
            return Err(Error::config(format!("column {c} has degree < 2")));
        }

        // Gauss-Jordan on [H_B | H_A]: reduce the parity part to identity so
        // the information part becomes P = H_B^{-1} H_A.
        let wk = words(k);
        let wm = words(m);
        let mut hb: Vec<Vec<u64>> = vec![vec![0; wm]; m];
        let mut ha: Vec<Vec<u64>> = vec![vec![0; wk]; m];
        for (r, nbrs) in row_nbrs.iter().enumerate() {
            for &v in nbrs {
                let v = v as usize;
                if v < k {
                    set_bit(&mut ha[r], v);
                } else {
                    set_bit(&mut hb[r], v - k);
                }
            }
        }
        for col in 0..m {
            let pivot = (col..m).find(|&r| get_bit(&hb[r], col)).ok_or_else(|| {
                Error::config("H not reducible to encodable form (singular parity part)")
            })?;
            hb.swap(col, pivot);
            ha.swap(col, pivot);
            for r in 0..m {
                if r != col && get_bit(&hb[r], col) {
                    let (a, b) = if r < col {
                        let (lo, hi) = hb.split_at_mut(col);
                        (&mut lo[r], &hi[0])
                    } else {
                        let (lo, hi) = hb.split_at_mut(r);
                        (&mut hi[0], &lo[col])
                    };
                    xor_into(a, b);
                    let (a, b) = if r < col {
                        let (lo, hi) = ha.split_at_mut(col);
                        (&mut lo[r], &hi[0])
                    } else {
                        let (lo, hi) = ha.split_at_mut(r);
                        (&mut hi[0], &lo[col])
                    };
                    xor_into(a, b);
                }
            }
        }

        Ok(LdpcCode { n, k, row_nbrs, col_nbrs, encoder: ha })
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// Systematic encoding: codeword = [message, parity], H c = 0.
    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.k {
            return Err(Error::shape(format!(
                "message length {} vs k = {}",
                message.len(),
                self.k
            )));
        }
        let wk = words(self.k);
        let mut packed = vec![0u64; wk];
        for (i, &b) in message.iter().enumerate() {
            if b & 1 == 1 {
                set_bit(&mut packed, i);
            }
        }
        let mut cw = Vec::with_capacity(self.n);
        cw.extend_from_slice(message);
        for row in &self.encoder {
            let mut acc = 0u64;
            for (a, b) in row.iter().zip(&packed) {
                acc ^= a & b;
            }
            cw.push((acc.count_ones() & 1) as u8);
        }
        Ok(cw)
    }

    /// Parity check H c over GF(2); all-zero means a valid codeword.
    pub fn syndrome(&self, cw: &[u8]) -> Vec<u8> {
        self.row_nbrs
            .iter()
            .map(|nbrs| nbrs.iter().fold(0u8, |acc, &v| acc ^ (cw[v as usize] & 1)))
            .collect()
    }

    pub fn syndrome_is_zero(&self, cw: &[u8]) -> bool {
        self.syndrome(cw).iter().all(|&s| s == 0)
    }

    /// Flooding sum-product decoder.
    ///
    /// `llrs` follow the demapper convention ln(P(1)/P(0)); the decoder works
    /// internally with ln(P(0)/P(1)) and bridges the sign at entry. Returns
    /// hard decisions, a convergence flag and the number of iterations used.
    pub fn bp_decode(&self, llrs: &[f64], max_iters: usize) -> Result<(Vec<u8>, bool, usize)> {
        if llrs.len() != self.n {
            return Err(Error::shape(format!("{} LLRs vs n = {}", llrs.len(), self.n)));
        }
        if llrs.iter().any(|l| !l.is_finite()) {
            return Err(Error::numerical("non-finite input LLR"));
        }
        let lambda: Vec<f64> =
            llrs.iter().map(|l| (-l).clamp(-LLR_CLAMP, LLR_CLAMP)).collect();

        // Edge-centric storage, grouped by check node.
        let mut edge_var: Vec<u32> = Vec::new();
        let mut check_start: Vec<usize> = Vec::with_capacity(self.row_nbrs.len() + 1);
        check_start.push(0);
        for nbrs in &self.row_nbrs {
            edge_var.extend_from_slice(nbrs);
            check_start.push(edge_var.len());
        }
        let n_edges = edge_var.len();
        // Edges incident to each variable, in check order.
        let mut var_edges: Vec<Vec<u32>> = vec![Vec::new(); self.n];
        for (e, &v) in edge_var.iter().enumerate() {
            var_edges[v as usize].push(e as u32);
        }

        let mut q: Vec<f64> = edge_var.iter().map(|&v| lambda[v as usize]).collect();
        let mut r = vec![0.0f64; n_edges];
        let mut hard = vec![0u8; self.n];
        let mut scratch: Vec<f64> = Vec::new();

        for it in 1..=max_iters {
            // Check update with exclude-one prefix/suffix products.
            for c in 0..self.row_nbrs.len() {
                let lo = check_start[c];
                let hi = check_start[c + 1];
                let deg = hi - lo;
                scratch.clear();
                scratch.extend(q[lo..hi].iter().map(|&x| (x / 2.0).tanh()));
                let mut suffix = vec![1.0f64; deg + 1];
                for i in (0..deg).rev() {
                    suffix[i] = suffix[i + 1] * scratch[i];
                }
                let mut prefix = 1.0f64;
                for i in 0..deg {
                    let prod = prefix * suffix[i + 1];
                    r[lo + i] = (2.0 * prod.atanh()).clamp(-LLR_CLAMP, LLR_CLAMP);
                    prefix *= scratch[i];
                }
            }
            // Variable update and tentative decisions. A bit with an exactly
            // zero posterior stays undecided and blocks convergence.
            let mut all_decided = true;
            for v in 0..self.n {
                let total: f64 = lambda[v] + var_edges[v].iter().map(|&e| r[e as usize]).sum::<f64>();
                hard[v] = if total < 0.0 { 1 } else { 0 };
                if total == 0.0 {
                    all_decided = false;
                }
                for &e in &var_edges[v] {
                    q[e as usize] = (total - r[e as usize]).clamp(-LLR_CLAMP, LLR_CLAMP);
                }
            }
            if all_decided && self.syndrome_is_zero(&hard) {
                return Ok((hard, true, it));
            }
        }
        Ok((hard, false, max_iters))
    }
}

/// Parses the standard alist sparse-matrix exchange format.
pub fn load_alist(text: &str) -> Result<LdpcCode> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next_ints = |expect: &str| -> Result<(usize, Vec<i64>)> {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing {expect}") })?;
        let vals: std::result::Result<Vec<i64>, _> =
            line.split_whitespace().map(|t| t.parse::<i64>()).collect();
        match vals {
            Ok(v) => Ok((idx + 1, v)),
            Err(_) => Err(Error::Parse { line: idx + 1, msg: format!("bad integer in {expect}") }),
        }
    };

    let (ln, dims) = next_ints("dimensions")?;
    if dims.len() != 2 || dims[0] <= 0 || dims[1] <= 0 {
        return Err(Error::Parse { line: ln, msg: "expected 'N M'".into() });
    }
    let n = dims[0] as usize;
    let m = dims[1] as usize;
    let (_, _max_degs) = next_ints("max degrees")?;
    let (ln, col_degs) = next_ints("column degrees")?;
    if col_degs.len() != n {
        return Err(Error::Parse { line: ln, msg: format!("expected {n} column degrees") });
    }
    let (ln, row_degs) = next_ints("row degrees")?;
    if row_degs.len() != m {
        return Err(Error::Parse { line: ln, msg: format!("expected {m} row degrees") });
    }

    let mut col_lists: Vec<Vec<u32>> = Vec::with_capacity(n);
    for c in 0..n {
        let (ln, vals) = next_ints(&format!("column {c} neighbors"))?;
        let nz: Vec<u32> = vals.iter().filter(|&&v| v != 0).map(|&v| (v - 1) as u32).collect();
        if nz.len() != col_degs[c] as usize {
            return Err(Error::Parse {
                line: ln,
                msg: format!("column {c}: {} entries vs declared degree {}", nz.len(), col_degs[c]),
            });
        }
        if nz.iter().any(|&r| r as usize >= m) {
            return Err(Error::Parse { line: ln, msg: format!("column {c}: row index out of range") });
        }
        col_lists.push(nz);
    }
    let mut row_nbrs: Vec<Vec<u32>> = vec![Vec::new(); m];
    for r in 0..m {
        let (ln, vals) = next_ints(&format!("row {r} neighbors"))?;
        let nz: Vec<u32> = vals.iter().filter(|&&v| v != 0).map(|&v| (v - 1) as u32).collect();
        if nz.len() != row_degs[r] as usize {
            return Err(Error::Parse {
                line: ln,
                msg: format!("row {r}: {} entries vs declared degree {}", nz.len(), row_degs[r]),
            });
        }
        if nz.iter().any(|&c| c as usize >= n) {
            return Err(Error::Parse { line: ln, msg: format!("row {r}: column index out of range") });
        }
        row_nbrs[r] = nz;
    }
    // Cross-check the two adjacency blocks.
    for (c, rows) in col_lists.iter().enumerate() {
        for &r in rows {
            if !row_nbrs[r as usize].contains(&(c as u32)) {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("adjacency mismatch at column {c}, row {r}"),
                });
            }
        }
    }
    LdpcCode::from_adjacency(n, row_nbrs)
}

/// Serializes the parity-check matrix as alist text (1-based, no padding).
pub fn to_alist(code: &LdpcCode) -> String {
    let m = code.row_nbrs.len();
    let max_col = code.col_nbrs.iter().map(Vec::len).max().unwrap_or(0);
    let max_row = code.row_nbrs.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", code.n, m));
    out.push_str(&format!("{max_col} {max_row}\n"));
    let col_degs: Vec<String> = code.col_nbrs.iter().map(|v| v.len().to_string()).collect();
    out.push_str(&col_degs.join(" "));
    out.push('\n');
    let row_degs: Vec<String> = code.row_nbrs.iter().map(|v| v.len().to_string()).collect();
    out.push_str(&row_degs.join(" "));
    out.push('\n');
    for col in &code.col_nbrs {
        let ids: Vec<String> = col.iter().map(|&r| (r + 1).to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    for row in &code.row_nbrs {
        let ids: Vec<String> = row.iter().map(|&c| (c + 1).to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    out
}

/// IEEE 802.11n rate-1/2 base graph for n = 1296 (Z = 54), row-major,
/// -1 marks an empty block.
#[rustfmt::skip]
const WIFI_1296_R12_BASE: [[i8; 24]; 12] = [
    [40, -1, -1, -1, 22, -1, 49, 23, 43, -1, -1, -1,  1,  0, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [50,  1, -1, -1, 48, 35, -1, -1, 13, -1, 30, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [39, 50, -1, -1,  4, -1,  2, -1, -1, -1, -1, 49, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1, -1, -1],
    [33, -1, -1, 38, 37, -1, -1,  4,  1, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1, -1],
    [45, -1, -1, -1,  0, 22, -1, -1, 20, 42, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1],
    [51, -1, -1, 48, 35, -1, -1, -1, 44, -1, 18, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1],
    [47, 11, -1, -1, -1, 17, -1, -1, 51, -1, -1, -1,  0, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1],
    [ 5, -1, 25, -1,  6, -1, 45, -1, 13, 40, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1],
    [33, -1, -1, 34, 24, -1, -1, -1, 23, -1, -1, 46, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1],
    [ 1, -1, 27, -1,  1, -1, -1, -1, 38, -1, 44, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1],
    [-1, 18, -1, -1, 23, -1, -1,  8,  0, 35, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0],
    [49, -1, 17, -1, 30, -1, -1, -1, 34, -1, -1, 19,  1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0],
];

/// Expands the 802.11n n = 1296, rate-1/2 code (Z = 54 circulants).
pub fn wifi_1296_rate_half() -> Result<LdpcCode> {
    let z = 54usize;
    let n = 24 * z;
    let m = 12 * z;
    let mut row_nbrs: Vec<Vec<u32>> = vec![Vec::new(); m];
    for (bi, row) in WIFI_1296_R12_BASE.iter().enumerate() {
        for (bj, &shift) in row.iter().enumerate() {
            if shift < 0 {
                continue;
            }
            let s = shift as usize % z;
            for r in 0..z {
                let row_idx = bi * z + r;
                let col_idx = bj * z + (r + s) % z;
                row_nbrs[row_idx].push(col_idx as u32);
            }
        }
    }
    for nbrs in row_nbrs.iter_mut() {
        nbrs.sort_unstable();
    }
    LdpcCode::from_adjacency(n, row_nbrs)
}

/// Small (3,6)-regular code for fast tests.
pub const TOY_3_6_ALIST: &str = "\
12 6
3 6
3 3 3 3 3 3 3 3 3 3 3 3
6 6 6 6 6 6
1 3 6
1 2 4
1 3 4
1 2 3
2 5 6
4 5 6
2 3 4
2 3 5
1 4 5
2 5 6
1 4 6
3 5 6
1 2 3 4 9 11
2 4 5 7 8 10
1 3 4 7 8 12
2 3 6 7 9 11
5 6 8 9 10 12
1 5 6 10 11 12
";
