//! Shared fixtures: small simulated uplink RGs through the conventional
//! estimation chain.

use mulink_core::channel::{
    apply_uplink, estimate_covariance, generate_channel, snr_to_sigma2, trial_rng,
    ChannelModelConfig,
};
use mulink_core::estimator::{estimate_channel, lmmse_filter, EstimatorKind};
use mulink_core::grid::{build_pilot_pattern, gray_qam, Constellation, GridConfig, PilotKind, PilotPattern};
use mulink_core::linalg::CMat;
use mulink_core::txrx::{random_data_bits, uplink_tx_grid};
use mulink_ml::UlRgInput;
use ndarray::Array4;
use rand::Rng;

pub struct Fixture {
    pub grid: GridConfig,
    pub pattern: PilotPattern,
    pub constellation: Constellation,
    pub channel: ChannelModelConfig,
    pub filters: Vec<CMat>,
    pub sigma2: f64,
}

pub fn small_fixture(m_bits: usize, snr_db: f64, speed_range: (f64, f64)) -> Fixture {
    fixture(m_bits, 2, snr_db, speed_range)
}

pub fn fixture(m_bits: usize, n_users: usize, snr_db: f64, speed_range: (f64, f64)) -> Fixture {
    let grid = GridConfig {
        n_subcarriers: 12,
        n_symbols: 14,
        n_bs_antennas: 4,
        n_users,
        bits_per_symbol: m_bits,
        pilot_kind: PilotKind::TwoP,
    };
    let pattern = build_pilot_pattern(&grid).unwrap();
    let constellation = gray_qam(m_bits).unwrap();
    let channel = ChannelModelConfig::default_tdl(grid.n_users);
    let sigma2 = snr_to_sigma2(snr_db);
    let sigma = estimate_covariance(&channel, &grid, &pattern, speed_range, 2000, 99).unwrap();
    let filters: Vec<CMat> =
        sigma.iter().map(|s| lmmse_filter(s, sigma2).unwrap()).collect();
    Fixture { grid, pattern, constellation, channel, filters, sigma2 }
}

/// Simulates one uplink RG end to end and runs the LMMSE estimation chain.
/// Returns the receiver input plus the true channel.
pub fn simulate_rg(fx: &Fixture, speed_range: (f64, f64), seed: u64) -> (UlRgInput, Array4<num_complex::Complex64>) {
    let mut rng = trial_rng(seed, 0);
    let mut ch = fx.channel.clone();
    for sp in ch.user_speeds.iter_mut() {
        *sp = rng.random_range(speed_range.0..=speed_range.1);
    }
    let h = generate_channel(&ch, &fx.grid, &mut rng).unwrap();
    let bits = random_data_bits(&fx.grid, &fx.constellation, &mut rng);
    let x = uplink_tx_grid(&bits, &fx.constellation, &fx.pattern, &fx.grid);
    let y = apply_uplink(&h, &x, fx.sigma2, &mut rng).unwrap();
    let h_hat = estimate_channel(
        &h,
        &y,
        Some(&fx.filters),
        EstimatorKind::Lmmse,
        &fx.pattern,
        &fx.grid,
    )
    .unwrap();
    (UlRgInput { h_hat, y, sigma2: fx.sigma2, bits: Some(bits) }, h)
}
