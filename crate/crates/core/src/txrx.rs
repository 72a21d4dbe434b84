//! Transmit-side assembly of one resource grid: random payload bits, QAM
//! mapping, and orthogonal unit-pilot insertion for both directions.

use ndarray::{Array3, Array4};
use num_complex::Complex64;
use rand::Rng;

use crate::grid::{Constellation, GridConfig, PilotPattern};

/// Random data bits (N_f, N_t, N_k, M); pilot-symbol entries stay zero.
pub fn random_data_bits(
    grid: &GridConfig,
    constellation: &Constellation,
    rng: &mut impl Rng,
) -> Array4<u8> {
    let m = constellation.bits_per_symbol;
    let mut bits = Array4::<u8>::zeros((grid.n_subcarriers, grid.n_symbols, grid.n_users, m));
    for f in 0..grid.n_subcarriers {
        for &t in grid.data_symbols().iter() {
            for k in 0..grid.n_users {
                for i in 0..m {
                    bits[(f, t, k, i)] = rng.random_range(0..2);
                }
            }
        }
    }
    bits
}

/// Uplink transmit grid: data REs carry mapped symbols, pilot symbols carry
/// each user's unit pilots on its staggered subcarriers (zero elsewhere).
pub fn uplink_tx_grid(
    bits: &Array4<u8>,
    constellation: &Constellation,
    pattern: &PilotPattern,
    grid: &GridConfig,
) -> Array3<Complex64> {
    let m = constellation.bits_per_symbol;
    let mut x = Array3::<Complex64>::zeros((grid.n_subcarriers, grid.n_symbols, grid.n_users));
    let data_symbols = grid.data_symbols();
    for f in 0..grid.n_subcarriers {
        for &t in &data_symbols {
            for k in 0..grid.n_users {
                let word: Vec<u8> = (0..m).map(|i| bits[(f, t, k, i)]).collect();
                x[(f, t, k)] = constellation.point_for_bits(&word);
            }
        }
    }
    for u in 0..grid.n_users {
        for &(f, t) in &pattern.pilot_res[u] {
            x[(f, t, u)] = Complex64::new(1.0, 0.0);
        }
    }
    x
}

/// Downlink user-symbol grid before precoding (pilots inserted).
pub fn downlink_user_grid(
    bits: &Array4<u8>,
    constellation: &Constellation,
    pattern: &PilotPattern,
    grid: &GridConfig,
) -> Array3<Complex64> {
    let m = constellation.bits_per_symbol;
    let mut u_grid = Array3::<Complex64>::zeros((grid.n_subcarriers, grid.n_symbols, grid.n_users));
    for f in 0..grid.n_subcarriers {
        for &t in grid.data_symbols().iter() {
            for k in 0..grid.n_users {
                let word: Vec<u8> = (0..m).map(|i| bits[(f, t, k, i)]).collect();
                u_grid[(f, t, k)] = constellation.point_for_bits(&word);
            }
        }
    }
    crate::downlink::insert_dl_pilots(&mut u_grid, pattern, grid);
    u_grid
}

/// Hard-decision bit errors of an LLR grid against transmitted bits, counted
/// over data REs only. Returns (errors, total).
pub fn count_bit_errors(
    llr: &Array4<f64>,
    bits: &Array4<u8>,
    grid: &GridConfig,
) -> (u64, u64) {
    let (_, _, n_k, m) = llr.dim();
    let mut errors = 0u64;
    let mut total = 0u64;
    for f in 0..grid.n_subcarriers {
        for &t in grid.data_symbols().iter() {
            for k in 0..n_k {
                for i in 0..m {
                    let decided = if llr[(f, t, k, i)] > 0.0 { 1u8 } else { 0u8 };
                    if decided != bits[(f, t, k, i)] {
                        errors += 1;
                    }
                    total += 1;
                }
            }
        }
    }
    (errors, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_pilot_pattern, gray_qam, PilotKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pilot_res_orthogonal_in_tx_grid() {
        let grid = GridConfig {
            n_subcarriers: 12,
            n_symbols: 14,
            n_bs_antennas: 2,
            n_users: 4,
            bits_per_symbol: 4,
            pilot_kind: PilotKind::TwoP,
        };
        let pattern = build_pilot_pattern(&grid).unwrap();
        let constellation = gray_qam(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bits = random_data_bits(&grid, &constellation, &mut rng);
        let x = uplink_tx_grid(&bits, &constellation, &pattern, &grid);
        for u in 0..4 {
            for &(f, t) in &pattern.pilot_res[u] {
                assert_eq!(x[(f, t, u)], Complex64::new(1.0, 0.0));
                for other in 0..4 {
                    if other != u {
                        assert_eq!(x[(f, t, other)], Complex64::new(0.0, 0.0));
                    }
                }
            }
        }
    }
}
