//! Trainable parameter sets for the learned receiver.
//!
//! Every user shares the same component copies, so no parameter shape
//! depends on the number of users or BS antennas; parameters trained at one
//! system size load unchanged at another.

use mulink_autodiff::ops::softplus_scalar;
use mulink_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cnn::{conv_plan, ConvNet};

/// Architecture knobs shared by the component networks.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MlArch {
    pub hidden_channels: usize,
    pub n_layers: usize,
    pub kernel: usize,
    /// Bits per channel use of the demapped constellation.
    pub bits_per_symbol: usize,
}

impl MlArch {
    pub fn new(bits_per_symbol: usize) -> Self {
        MlArch { hidden_channels: 16, n_layers: 4, kernel: 3, bits_per_symbol }
    }

    /// sigma^2 plane, time/frequency pilot-distance planes, Doppler plane.
    fn estimator_inputs(&self) -> usize {
        4
    }

    /// Re, Im, noise variance, plus the conventional LLR planes.
    fn demapper_inputs(&self) -> usize {
        3 + self.bits_per_symbol
    }

    fn cnn_e_plan(&self) -> Vec<(usize, usize, usize, usize)> {
        conv_plan(self.estimator_inputs(), self.hidden_channels, 1, self.n_layers, self.kernel, self.kernel)
    }

    fn cnn_l_plan(&self) -> Vec<(usize, usize, usize, usize)> {
        // Two 1-D layers over subcarriers.
        conv_plan(1, self.hidden_channels, 1, 2, 1, self.kernel)
    }

    fn cnn_demap_plan(&self) -> Vec<(usize, usize, usize, usize)> {
        conv_plan(
            self.demapper_inputs(),
            self.hidden_channels,
            self.bits_per_symbol,
            self.n_layers,
            self.kernel,
            self.kernel,
        )
    }

    fn cnn_v_plan(&self) -> Vec<(usize, usize, usize, usize)> {
        // Predicts the estimation-error variance and interference-power
        // planes.
        conv_plan(self.estimator_inputs(), self.hidden_channels, 2, self.n_layers, self.kernel, self.kernel)
    }
}

/// Uplink receiver parameters: error-covariance predictor (CNN_E with a
/// power-decay template and a CNN_l Doppler feature) and the grid-wide
/// demapper correction.
#[derive(Clone, Debug)]
pub struct UplinkParams {
    pub arch: MlArch,
    pub cnn_e: ConvNet,
    pub cnn_l: ConvNet,
    pub cnn_demap: ConvNet,
    /// Unconstrained; the decay rate is softplus(gamma_raw).
    pub gamma_raw: Tensor,
    /// Phase slope of the decay template.
    pub theta_p: Tensor,
}

/// Raw parameter initializing softplus(gamma_raw) = pi exactly.
pub fn gamma_raw_for_pi() -> f64 {
    (std::f64::consts::PI.exp() - 1.0).ln()
}

impl UplinkParams {
    /// Random initialization; gamma starts at pi.
    pub fn init(arch: MlArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cnn_e = ConvNet::init(&arch.cnn_e_plan(), false, &mut rng);
        let cnn_l = ConvNet::init(&arch.cnn_l_plan(), false, &mut rng);
        let cnn_demap = ConvNet::init(&arch.cnn_demap_plan(), true, &mut rng);
        let theta0: f64 = rng.random_range(-0.1..0.1);
        UplinkParams {
            arch,
            cnn_e,
            cnn_l,
            cnn_demap,
            gamma_raw: Tensor::param(vec![1], vec![gamma_raw_for_pi()]),
            theta_p: Tensor::param(vec![1], vec![theta0]),
        }
    }

    pub fn gamma(&self) -> f64 {
        softplus_scalar(self.gamma_raw.item())
    }

    /// Canonical parameter order (checkpoints, Adam state, grad exchange).
    pub fn params(&self) -> Vec<Tensor> {
        let mut out = self.cnn_e.params();
        out.extend(self.cnn_l.params());
        out.extend(self.cnn_demap.params());
        out.push(self.gamma_raw.clone());
        out.push(self.theta_p.clone());
        out
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let nets =
            [("cnn_e", &self.cnn_e), ("cnn_l", &self.cnn_l), ("cnn_demap", &self.cnn_demap)];
        let mut out = named_net_params(&nets);
        out.push(("gamma_raw".to_string(), self.gamma_raw.clone()));
        out.push(("theta_p".to_string(), self.theta_p.clone()));
        out
    }

    pub fn to_values(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.value()).collect()
    }

    pub fn from_values(arch: MlArch, values: &[Vec<f64>]) -> Self {
        let mut it = values.iter().cloned();
        let cnn_e = ConvNet::from_values(&arch.cnn_e_plan(), &mut it);
        let cnn_l = ConvNet::from_values(&arch.cnn_l_plan(), &mut it);
        let cnn_demap = ConvNet::from_values(&arch.cnn_demap_plan(), &mut it);
        let gamma_raw = Tensor::param(vec![1], it.next().expect("gamma_raw"));
        let theta_p = Tensor::param(vec![1], it.next().expect("theta_p"));
        assert!(it.next().is_none(), "extra parameter values");
        UplinkParams { arch, cnn_e, cnn_l, cnn_demap, gamma_raw, theta_p }
    }
}

/// Downlink UE-side parameters: per-RE variance predictions (v, j) and the
/// demapper correction; shared by all users.
#[derive(Clone, Debug)]
pub struct DownlinkParams {
    pub arch: MlArch,
    pub cnn_v: ConvNet,
    pub cnn_l: ConvNet,
    pub cnn_demap: ConvNet,
}

impl DownlinkParams {
    pub fn init(arch: MlArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1);
        DownlinkParams {
            arch,
            cnn_v: ConvNet::init(&arch.cnn_v_plan(), false, &mut rng),
            cnn_l: ConvNet::init(&arch.cnn_l_plan(), false, &mut rng),
            cnn_demap: ConvNet::init(&arch.cnn_demap_plan(), true, &mut rng),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut out = self.cnn_v.params();
        out.extend(self.cnn_l.params());
        out.extend(self.cnn_demap.params());
        out
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let nets =
            [("cnn_v", &self.cnn_v), ("cnn_l", &self.cnn_l), ("cnn_demap", &self.cnn_demap)];
        named_net_params(&nets)
    }

    pub fn to_values(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.value()).collect()
    }

    pub fn from_values(arch: MlArch, values: &[Vec<f64>]) -> Self {
        let mut it = values.iter().cloned();
        let cnn_v = ConvNet::from_values(&arch.cnn_v_plan(), &mut it);
        let cnn_l = ConvNet::from_values(&arch.cnn_l_plan(), &mut it);
        let cnn_demap = ConvNet::from_values(&arch.cnn_demap_plan(), &mut it);
        assert!(it.next().is_none(), "extra parameter values");
        DownlinkParams { arch, cnn_v, cnn_l, cnn_demap }
    }
}

fn named_net_params(nets: &[(&str, &ConvNet)]) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (name, net) in nets {
        for (layer, (k, b)) in net.kernels.iter().zip(&net.biases).enumerate() {
            out.push((format!("{name}.layer{layer}.kernel"), k.clone()));
            out.push((format!("{name}.layer{layer}.bias"), b.clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_initializes_to_pi() {
        let p = UplinkParams::init(MlArch::new(4), 1);
        assert!((p.gamma() - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn value_roundtrip_preserves_everything() {
        let arch = MlArch::new(4);
        let p = UplinkParams::init(arch, 3);
        let values = p.to_values();
        let q = UplinkParams::from_values(arch, &values);
        for (a, b) in p.params().iter().zip(q.params().iter()) {
            assert_eq!(a.value(), b.value());
            assert_eq!(a.shape(), b.shape());
        }
    }

    #[test]
    fn no_shape_depends_on_user_or_antenna_count() {
        // The parameter list is a pure function of the architecture.
        let p = UplinkParams::init(MlArch::new(4), 9);
        let shapes: Vec<Vec<usize>> = p.params().iter().map(|t| t.shape().to_vec()).collect();
        for s in &shapes {
            // Channels are architecture constants (4 features, 16 hidden, M
            // outputs); none equals a plausible N_k or N_m unless fixed.
            assert!(!s.is_empty());
        }
        let named = p.named_params();
        assert_eq!(named.len(), p.params().len());
        let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"gamma_raw"));
        assert!(names.contains(&"cnn_demap.layer3.kernel"));
    }

    #[test]
    fn zero_init_demap_head() {
        let p = UplinkParams::init(MlArch::new(2), 5);
        let last = p.cnn_demap.kernels.last().unwrap();
        assert!(last.value().iter().all(|v| *v == 0.0));
    }
}
