mod common;

use common::{simulate_rg, small_fixture};
use mulink_core::estimator::ErrorStats;
use mulink_core::uplink::{demap_grid, equalize_slot};
use mulink_ml::features::doppler_raw_feature;
use mulink_ml::receiver_ul::predicted_error_stats;
use mulink_ml::{uplink_forward, MlArch, MlScheme, UplinkParams};

/// Parameters whose covariance prediction is forced to (numerically) zero:
/// the equalizer must then degenerate to the E = 0 conventional baseline.
fn zeroed_params(arch: MlArch) -> UplinkParams {
    let params = UplinkParams::init(arch, 7);
    // Zero every CNN_E weight and drive the final bias strongly negative so
    // softplus(output) vanishes.
    for k in params.cnn_e.kernels.iter() {
        k.set_value(vec![0.0; k.numel()]);
    }
    for (i, b) in params.cnn_e.biases.iter().enumerate() {
        let v = if i == params.cnn_e.biases.len() - 1 { -60.0 } else { 0.0 };
        b.set_value(vec![v; b.numel()]);
    }
    params
}

#[test]
fn zero_prediction_matches_conventional_baseline() {
    let fx = small_fixture(4, 8.0, (10.0, 20.0));
    let (input, _) = simulate_rg(&fx, (10.0, 20.0), 5);
    let params = zeroed_params(MlArch::new(4));

    let ml = uplink_forward(&input, &fx.grid, &fx.pattern, &fx.constellation, &params, MlScheme::Full);

    let eq = equalize_slot(&input.y, &input.h_hat, None, fx.sigma2, &fx.grid, 0).unwrap();
    let llr = demap_grid(&eq, &fx.constellation).unwrap();

    let mut max_diff = 0.0f64;
    for (a, b) in ml.llr.iter().zip(llr.iter()) {
        max_diff = max_diff.max((a - b).abs());
    }
    assert!(max_diff < 1e-6, "max LLR deviation {max_diff}");
}

#[test]
fn predicted_stats_are_hermitian_psd() {
    let fx = small_fixture(2, 5.0, (30.0, 35.0));
    let (input, _) = simulate_rg(&fx, (30.0, 35.0), 11);
    let params = UplinkParams::init(MlArch::new(2), 3);
    let out = uplink_forward(&input, &fx.grid, &fx.pattern, &fx.constellation, &params, MlScheme::ChestOnly);
    let e_hat = predicted_error_stats(
        &out.s_plane,
        params.gamma(),
        params.theta_p.item(),
        fx.grid.n_bs_antennas,
    );
    let stats = ErrorStats { e: e_hat.clone() };
    for f in [0usize, 5, 11] {
        for t in [0usize, 6, 13] {
            assert!(mulink_core::linalg::is_hermitian_psd(&stats.at(f, t), 1e-9));
        }
    }
    // s >= 0 everywhere.
    assert!(out.s_plane.iter().all(|&v| v >= 0.0));
}

#[test]
fn llr_shape_and_finite() {
    let fx = small_fixture(4, 6.0, (40.0, 60.0));
    let (input, _) = simulate_rg(&fx, (40.0, 60.0), 13);
    let params = UplinkParams::init(MlArch::new(4), 21);
    let out = uplink_forward(&input, &fx.grid, &fx.pattern, &fx.constellation, &params, MlScheme::Full);
    assert_eq!(out.llr.dim(), (12, 14, 2, 4));
    assert!(out.llr.iter().all(|v| v.is_finite()));
    assert!(out.loss.as_ref().unwrap().item().is_finite());
}

#[test]
fn doppler_feature_grows_with_speed() {
    // Raw pilot-difference feature: higher user speed means larger temporal
    // decorrelation between the two pilot symbols.
    let fx = small_fixture(2, 10.0, (0.0, 0.0));
    let n_rgs = 100;
    let mut stats = [(0.0f64, 0.0f64), (0.0f64, 0.0f64)]; // (sum, sumsq)
    for (si, speed) in [(0usize, 50.0 / 3.6), (1usize, 120.0 / 3.6)] {
        for rg in 0..n_rgs {
            let (input, _) = simulate_rg(&fx, (speed, speed), 1000 + rg as u64);
            let raw = doppler_raw_feature(&input.h_hat, &fx.grid, 0, 0);
            let mean: f64 = raw.iter().sum::<f64>() / raw.len() as f64;
            stats[si].0 += mean;
            stats[si].1 += mean * mean;
        }
    }
    let n = n_rgs as f64;
    let mean50 = stats[0].0 / n;
    let mean120 = stats[1].0 / n;
    let se = |s: (f64, f64)| ((s.1 / n - (s.0 / n) * (s.0 / n)) / n).sqrt();
    let margin = 3.0 * (se(stats[0]) + se(stats[1]));
    assert!(
        mean120 > mean50 + margin,
        "feature at 120 km/h {mean120} vs 50 km/h {mean50} (margin {margin})"
    );
}

#[test]
fn one_pilot_pattern_bypasses_doppler_feature() {
    let mut fx = small_fixture(2, 8.0, (0.0, 5.0));
    fx.grid.pilot_kind = mulink_core::grid::PilotKind::OneP;
    fx.pattern = mulink_core::grid::build_pilot_pattern(&fx.grid).unwrap();
    // Re-acquire the filter at the new pattern dimension.
    let sigma = mulink_core::channel::estimate_covariance(
        &fx.channel,
        &fx.grid,
        &fx.pattern,
        (0.0, 5.0),
        2000,
        5,
    )
    .unwrap();
    fx.filters = sigma
        .iter()
        .map(|s| mulink_core::estimator::lmmse_filter(s, fx.sigma2).unwrap())
        .collect();
    let (input, _) = simulate_rg(&fx, (0.0, 5.0), 3);
    let raw = doppler_raw_feature(&input.h_hat, &fx.grid, 0, 0);
    assert!(raw.iter().all(|&v| v == 0.0));
}

#[test]
fn parameters_transfer_across_user_counts() {
    // Trainable shapes depend only on the architecture, so one parameter set
    // runs at four users and at two users unchanged.
    let params = UplinkParams::init(MlArch::new(4), 77);
    for n_users in [4usize, 2] {
        let fx = common::fixture(4, n_users, 8.0, (10.0, 20.0));
        let (input, _) = simulate_rg(&fx, (10.0, 20.0), 17);
        let out =
            uplink_forward(&input, &fx.grid, &fx.pattern, &fx.constellation, &params, MlScheme::Full);
        assert_eq!(out.llr.dim().2, n_users);
        assert!(out.llr.iter().all(|v| v.is_finite()));
    }
}
