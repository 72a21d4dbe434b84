//! Resource-grid geometry, pilot patterns and Gray-labeled QAM constellations.
//!
//! A resource grid (RG) spans `n_subcarriers` subcarriers and `2 * n_symbols`
//! OFDM symbols: the first slot carries the uplink, the second the downlink.
//! All indices are 0-based internally; user-facing documentation and JSON
//! dumps follow the same convention.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subcarriers per resource block.
pub const RB_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    /// Pilots on one temporal position per slot.
    OneP,
    /// Pilots on two temporal positions per slot.
    TwoP,
}

impl PilotKind {
    /// Pilot-bearing symbol indices within a slot (0-based).
    pub fn pilot_symbols(self) -> &'static [usize] {
        match self {
            PilotKind::OneP => &[2],
            PilotKind::TwoP => &[2, 10],
        }
    }
}

/// Static geometry of one simulated transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Number of subcarriers N_f (a multiple of 12).
    pub n_subcarriers: usize,
    /// OFDM symbols per slot N_t (the RG holds 2*N_t).
    pub n_symbols: usize,
    /// BS antennas N_m.
    pub n_bs_antennas: usize,
    /// Single-antenna users N_k.
    pub n_users: usize,
    /// Bits per channel use M (even, square QAM).
    pub bits_per_symbol: usize,
    pub pilot_kind: PilotKind,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 || self.n_subcarriers % RB_SIZE != 0 {
            return Err(Error::config(format!(
                "n_subcarriers must be a positive multiple of {RB_SIZE}, got {}",
                self.n_subcarriers
            )));
        }
        if self.n_symbols == 0 || self.n_bs_antennas == 0 || self.n_users == 0 {
            return Err(Error::config("all counts must be >= 1"));
        }
        if self.bits_per_symbol < 2 || self.bits_per_symbol % 2 != 0 {
            return Err(Error::config(format!(
                "bits_per_symbol must be even and >= 2, got {}",
                self.bits_per_symbol
            )));
        }
        if self.n_users > 4 {
            return Err(Error::config(format!(
                "pilot layout is defined for at most 4 users, got {}",
                self.n_users
            )));
        }
        if RB_SIZE % self.n_users != 0 {
            return Err(Error::config(format!(
                "{} users do not stagger evenly into a {RB_SIZE}-subcarrier resource block",
                self.n_users
            )));
        }
        for sym in self.pilot_kind.pilot_symbols() {
            if *sym >= self.n_symbols {
                return Err(Error::config(format!(
                    "pilot symbol {sym} outside the {}-symbol slot",
                    self.n_symbols
                )));
            }
        }
        Ok(())
    }

    /// Total symbols in the RG (uplink + downlink slot).
    pub fn total_symbols(&self) -> usize {
        2 * self.n_symbols
    }

    /// Data-bearing symbol indices within a slot.
    pub fn data_symbols(&self) -> Vec<usize> {
        let pilots = self.pilot_kind.pilot_symbols();
        (0..self.n_symbols).filter(|t| !pilots.contains(t)).collect()
    }

    /// Data bits carried by one slot for one user.
    pub fn data_bits_per_slot(&self) -> usize {
        self.n_subcarriers * self.data_symbols().len() * self.bits_per_symbol
    }
}

/// Per-user pilot placement plus the nearest-pilot partition of the grid.
#[derive(Debug, Clone, Serialize)]
pub struct PilotPattern {
    pub n_pf: usize,
    pub n_pt: usize,
    /// Uplink pilot REs per user, ordered by (t, f).
    pub pilot_res: Vec<Vec<(usize, usize)>>,
    /// Downlink pilot REs per user (absolute symbol index), ordered by (t, f).
    pub dl_pilot_res: Vec<Vec<(usize, usize)>>,
    /// For each user, maps every RE (f, t) of the 2*N_t grid to the governing
    /// uplink pilot RE. Flattened as `f * total_symbols + t`.
    #[serde(skip)]
    pub group_of: Vec<Vec<(usize, usize)>>,
    /// Same partition for the downlink slot against downlink pilots
    /// (absolute t in [N_t, 2*N_t)).
    #[serde(skip)]
    pub dl_group_of: Vec<Vec<(usize, usize)>>,
    n_subcarriers: usize,
    n_symbols: usize,
}

/// Nearest pilot under (|dt|, |df|) lexicographic distance; ties prefer the
/// earlier pilot symbol, then the lower pilot subcarrier.
fn nearest_pilot(f: usize, t: usize, pilots: &[(usize, usize)]) -> (usize, usize) {
    let mut best = pilots[0];
    let mut best_key = (usize::MAX, usize::MAX, usize::MAX, usize::MAX);
    for &(pf, pt) in pilots {
        let dt = pt.abs_diff(t);
        let df = pf.abs_diff(f);
        let key = (dt, df, pt, pf);
        if key < best_key {
            best_key = key;
            best = (pf, pt);
        }
    }
    best
}

/// Builds the staggered pilot pattern: user `u` transmits pilots on
/// subcarriers `{u, u + N_k, u + 2*N_k, ...}` of each pilot-bearing symbol.
pub fn build_pilot_pattern(cfg: &GridConfig) -> Result<PilotPattern> {
    cfg.validate()?;
    let n_f = cfg.n_subcarriers;
    let n_t = cfg.n_symbols;
    let n_k = cfg.n_users;
    let syms = cfg.pilot_kind.pilot_symbols();

    let mut pilot_res = Vec::with_capacity(n_k);
    let mut dl_pilot_res = Vec::with_capacity(n_k);
    for u in 0..n_k {
        let mut ul = Vec::new();
        let mut dl = Vec::new();
        for &t in syms {
            for f in (u..n_f).step_by(n_k) {
                ul.push((f, t));
                dl.push((f, n_t + t));
            }
        }
        ul.sort_by_key(|&(f, t)| (t, f));
        dl.sort_by_key(|&(f, t)| (t, f));
        pilot_res.push(ul);
        dl_pilot_res.push(dl);
    }

    let total = cfg.total_symbols();
    let mut group_of = Vec::with_capacity(n_k);
    let mut dl_group_of = Vec::with_capacity(n_k);
    for u in 0..n_k {
        let mut map = vec![(0usize, 0usize); n_f * total];
        for f in 0..n_f {
            for t in 0..total {
                map[f * total + t] = nearest_pilot(f, t, &pilot_res[u]);
            }
        }
        group_of.push(map);

        let mut dl_map = vec![(0usize, 0usize); n_f * n_t];
        for f in 0..n_f {
            for t in n_t..total {
                dl_map[f * n_t + (t - n_t)] = nearest_pilot(f, t, &dl_pilot_res[u]);
            }
        }
        dl_group_of.push(dl_map);
    }

    Ok(PilotPattern {
        n_pf: n_f / n_k,
        n_pt: syms.len(),
        pilot_res,
        dl_pilot_res,
        group_of,
        dl_group_of,
        n_subcarriers: n_f,
        n_symbols: n_t,
    })
}

impl PilotPattern {
    /// Governing uplink pilot of RE (f, t) for `user`; t spans the full RG.
    pub fn group(&self, user: usize, f: usize, t: usize) -> (usize, usize) {
        self.group_of[user][f * (2 * self.n_symbols) + t]
    }

    /// Governing downlink pilot of RE (f, t) for `user`; t is absolute
    /// (in [N_t, 2*N_t)).
    pub fn dl_group(&self, user: usize, f: usize, t: usize) -> (usize, usize) {
        self.dl_group_of[user][f * self.n_symbols + (t - self.n_symbols)]
    }

    /// True if (f, t) is a pilot RE of any user in the uplink slot.
    pub fn is_ul_pilot_re(&self, _f: usize, t: usize) -> bool {
        // Staggered users jointly cover every subcarrier of a pilot symbol.
        self.pilot_res.iter().any(|set| set.iter().any(|&(_, pt)| pt == t))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n_pf": self.n_pf,
            "n_pt": self.n_pt,
            "pilot_res": self.pilot_res,
            "dl_pilot_res": self.dl_pilot_res,
        })
    }
}

/// Gray-labeled square QAM, unit mean energy.
///
/// The first M/2 bits of a label select the real-axis level (MSB first), the
/// remaining bits the imaginary axis. Per-axis labels are reflected Gray
/// codes, so the most significant bit of each axis equals 1 exactly on the
/// positive half-axis.
#[derive(Debug, Clone)]
pub struct Constellation {
    pub bits_per_symbol: usize,
    pub points: Vec<Complex64>,
    /// labels[p] is the bit label of points[p].
    pub labels: Vec<u32>,
    /// bit_subsets[i][b] lists the point indices whose i-th bit (MSB first)
    /// equals b.
    pub bit_subsets: Vec<[Vec<usize>; 2]>,
    /// Point index per label (inverse of `labels`).
    pub point_of_label: Vec<usize>,
}

fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

pub fn gray_qam(m: usize) -> Result<Constellation> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::config(format!("square QAM needs even M >= 2, got {m}")));
    }
    let half = m / 2;
    let levels = 1usize << half;
    // Per-axis mean energy is (L^2 - 1)/3 at unit spacing.
    let norm = (3.0 / (2.0 * ((levels * levels - 1) as f64))).sqrt();

    let n_points = 1usize << m;
    let mut points = vec![Complex64::new(0.0, 0.0); n_points];
    let mut labels = vec![0u32; n_points];
    for re_idx in 0..levels {
        for im_idx in 0..levels {
            let p = re_idx * levels + im_idx;
            let re = (2.0 * re_idx as f64 - (levels - 1) as f64) * norm;
            let im = (2.0 * im_idx as f64 - (levels - 1) as f64) * norm;
            points[p] = Complex64::new(re, im);
            labels[p] = ((gray(re_idx) << half) | gray(im_idx)) as u32;
        }
    }

    let mut bit_subsets = Vec::with_capacity(m);
    for i in 0..m {
        let mut subset = [Vec::new(), Vec::new()];
        for p in 0..n_points {
            let bit = (labels[p] >> (m - 1 - i)) & 1;
            subset[bit as usize].push(p);
        }
        bit_subsets.push(subset);
    }
    let mut point_of_label = vec![0usize; n_points];
    for (p, &l) in labels.iter().enumerate() {
        point_of_label[l as usize] = p;
    }

    Ok(Constellation {
        bits_per_symbol: m,
        points,
        labels,
        bit_subsets,
        point_of_label,
    })
}

impl Constellation {
    /// Maps M bits (MSB first) to a constellation point.
    pub fn point_for_bits(&self, bits: &[u8]) -> Complex64 {
        debug_assert_eq!(bits.len(), self.bits_per_symbol);
        let mut label = 0usize;
        for &b in bits {
            label = (label << 1) | (b as usize & 1);
        }
        self.points[self.point_of_label[label]]
    }

    /// Nearest-point hard decision, returning the M bits (MSB first).
    pub fn hard_bits(&self, x: Complex64) -> Vec<u8> {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (p, c) in self.points.iter().enumerate() {
            let d = (x - c).norm_sqr();
            if d < best_d {
                best_d = d;
                best = p;
            }
        }
        let label = self.labels[best];
        (0..self.bits_per_symbol)
            .map(|i| ((label >> (self.bits_per_symbol - 1 - i)) & 1) as u8)
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "bits_per_symbol": self.bits_per_symbol,
            "points": self.points.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
            "labels": self.labels,
        })
    }
}

/// Maps a bit stream (length divisible by M) onto constellation symbols.
pub fn map_bits(bits: &[u8], constellation: &Constellation) -> Result<Vec<Complex64>> {
    let m = constellation.bits_per_symbol;
    if bits.len() % m != 0 {
        return Err(Error::shape(format!(
            "bit count {} not divisible by M = {m}",
            bits.len()
        )));
    }
    Ok(bits.chunks(m).map(|c| constellation.point_for_bits(c)).collect())
}

/// Nearest-point inverse of [`map_bits`].
pub fn hard_demap(symbols: &[Complex64], constellation: &Constellation) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * constellation.bits_per_symbol);
    for &x in symbols {
        bits.extend(constellation.hard_bits(x));
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(n_f: usize, n_k: usize, kind: PilotKind) -> GridConfig {
        GridConfig {
            n_subcarriers: n_f,
            n_symbols: 14,
            n_bs_antennas: 4,
            n_users: n_k,
            bits_per_symbol: 4,
            pilot_kind: kind,
        }
    }

    #[test]
    fn one_rb_one_p_matches_reference_set() {
        // One RB, two staggered users: user 1 (index 0) sits on the odd
        // subcarriers of the third symbol in 1-based terms.
        let pattern = build_pilot_pattern(&cfg(12, 2, PilotKind::OneP)).unwrap();
        let expected_1based = [(1, 3), (3, 3), (5, 3), (7, 3), (9, 3), (11, 3)];
        let got: Vec<(usize, usize)> =
            pattern.pilot_res[0].iter().map(|&(f, t)| (f + 1, t + 1)).collect();
        assert_eq!(got, expected_1based);
        assert_eq!(pattern.n_pf, 6);
        assert_eq!(pattern.n_pt, 1);
    }

    #[test]
    fn pilot_sets_disjoint() {
        for n_k in 1..=4 {
            for kind in [PilotKind::OneP, PilotKind::TwoP] {
                let pattern = build_pilot_pattern(&cfg(24, n_k, kind)).unwrap();
                let mut seen = std::collections::HashSet::new();
                for set in &pattern.pilot_res {
                    for re in set {
                        assert!(seen.insert(*re), "pilot RE {re:?} reused");
                    }
                }
            }
        }
    }

    #[test]
    fn group_of_total_and_self_mapping() {
        let c = cfg(24, 4, PilotKind::TwoP);
        let pattern = build_pilot_pattern(&c).unwrap();
        for u in 0..4 {
            for f in 0..24 {
                for t in 0..c.total_symbols() {
                    let g = pattern.group(u, f, t);
                    assert!(pattern.pilot_res[u].contains(&g));
                }
            }
            for &(f, t) in &pattern.pilot_res[u] {
                assert_eq!(pattern.group(u, f, t), (f, t));
            }
        }
    }

    #[test]
    fn downlink_half_governed_by_last_pilot_symbol() {
        let c = cfg(12, 2, PilotKind::TwoP);
        let pattern = build_pilot_pattern(&c).unwrap();
        for f in 0..12 {
            for t in 14..28 {
                let (_, pt) = pattern.group(0, f, t);
                assert_eq!(pt, 10);
            }
        }
    }

    #[test]
    fn too_many_users_rejected() {
        assert!(build_pilot_pattern(&cfg(12, 5, PilotKind::OneP)).is_err());
    }

    #[test]
    fn qpsk_points() {
        let c = gray_qam(2).unwrap();
        let s = 1.0 / 2.0_f64.sqrt();
        for p in &c.points {
            assert_abs_diff_eq!(p.re.abs(), s, epsilon = 1e-15);
            assert_abs_diff_eq!(p.im.abs(), s, epsilon = 1e-15);
        }
    }

    #[test]
    fn qam16_levels() {
        let c = gray_qam(4).unwrap();
        let norm = 1.0 / 10.0_f64.sqrt();
        let mut res: Vec<f64> = c.points.iter().map(|p| p.re / norm).collect();
        res.sort_by(|a, b| a.partial_cmp(b).unwrap());
        res.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        assert_eq!(res.len(), 4);
        for (got, want) in res.iter().zip([-3.0, -1.0, 1.0, 3.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        // Mean energy of the unnormalized lattice: (1+9+1+9)*2/4 / 10 = 1.
        let e: f64 = c.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_energy_and_gray_property() {
        for m in [2usize, 4, 6] {
            let c = gray_qam(m).unwrap();
            let e: f64 =
                c.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / c.points.len() as f64;
            assert_abs_diff_eq!(e, 1.0, epsilon = 1e-12);

            for i in 0..m {
                assert_eq!(c.bit_subsets[i][0].len(), 1 << (m - 1));
                assert_eq!(c.bit_subsets[i][1].len(), 1 << (m - 1));
            }

            // Neighbors along each axis differ in exactly one label bit.
            let levels = 1usize << (m / 2);
            for a in 0..levels {
                for b in 0..levels {
                    let p = a * levels + b;
                    if a + 1 < levels {
                        let q = (a + 1) * levels + b;
                        assert_eq!((c.labels[p] ^ c.labels[q]).count_ones(), 1);
                    }
                    if b + 1 < levels {
                        let q = a * levels + b + 1;
                        assert_eq!((c.labels[p] ^ c.labels[q]).count_ones(), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn constellation_closed_under_negation_and_conjugation() {
        for m in [2usize, 4, 6] {
            let c = gray_qam(m).unwrap();
            for &p in &c.points {
                for image in [-p, p.conj()] {
                    assert!(
                        c.points.iter().any(|&q| (q - image).norm() < 1e-12),
                        "missing {image} in {m}-bit constellation"
                    );
                }
            }
        }
    }

    #[test]
    fn odd_m_rejected() {
        assert!(gray_qam(3).is_err());
    }

    #[test]
    fn map_roundtrip_all_labels() {
        for m in [2usize, 4, 6] {
            let c = gray_qam(m).unwrap();
            let mut bits = Vec::new();
            for label in 0..(1usize << m) {
                for i in 0..m {
                    bits.push(((label >> (m - 1 - i)) & 1) as u8);
                }
            }
            let symbols = map_bits(&bits, &c).unwrap();
            assert_eq!(hard_demap(&symbols, &c), bits);
        }
    }

    #[test]
    fn random_payload_roundtrip_qam16() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let c = gray_qam(4).unwrap();
        let bits: Vec<u8> = (0..1296).map(|_| rng.random_range(0..2u8)).collect();
        let symbols = map_bits(&bits, &c).unwrap();
        assert_eq!(hard_demap(&symbols, &c), bits);
    }

    #[test]
    fn map_bits_length_mismatch() {
        let c = gray_qam(4).unwrap();
        assert!(map_bits(&[0, 1, 0], &c).is_err());
    }

    proptest! {
        #[test]
        fn group_preimages_partition_grid(n_k in 1usize..=4, two_p in proptest::bool::ANY) {
            let kind = if two_p { PilotKind::TwoP } else { PilotKind::OneP };
            let c = cfg(12, n_k, kind);
            let pattern = build_pilot_pattern(&c).unwrap();
            for u in 0..n_k {
                let mut count = 0usize;
                for f in 0..c.n_subcarriers {
                    for t in 0..c.total_symbols() {
                        let _ = pattern.group(u, f, t);
                        count += 1;
                    }
                }
                prop_assert_eq!(count, c.n_subcarriers * c.total_symbols());
            }
        }
    }
}
