//! End-to-end four-flow training and batch registration inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{AffineRegressor, Module, PatchDiscriminator, UnetGenerator, VitConfig, VitEncoder};
use crate::scalar::Scalar;
use crate::stn::warp;
use crate::tensor::Tensor;

mod infer;
mod run;

pub use infer::{register_batch, write_results_csv, RegisterOptions, RegistrationResult};
pub use run::{train, TrainOutcome, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("loss {name} became non-finite at step {step}")]
    NonFiniteLoss { step: u64, name: &'static str },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error("pair {pair_id}: image is {got:?}, model expects {expect}×{expect}")]
    ImageSize {
        pair_id: String,
        got: Vec<usize>,
        expect: usize,
    },
    #[error("manifest has no {0} pairs")]
    NoPairs(&'static str),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Which image the cycle output is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleTarget {
    /// The real visible image A.
    Visible,
    /// The fake visible Â₁ (treated as a constant target).
    FakeVisible,
}

impl CycleTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleTarget::Visible => "a",
            CycleTarget::FakeVisible => "a1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "a" => Some(CycleTarget::Visible),
            "a1" => Some(CycleTarget::FakeVisible),
            _ => None,
        }
    }
}

/// Every hyperparameter, size, seed and loss weight in one place.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub image_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_stn: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_adv: f64,
    pub lambda_l1_v2t: f64,
    pub lambda_l1_t2v: f64,
    pub lambda_cyc: f64,
    pub lambda_theta: f64,
    pub checkpoint_every: u64,
    pub cycle_target: CycleTarget,
    pub unet_stages: usize,
    pub unet_base: usize,
    pub disc_layers: usize,
    pub disc_base: usize,
    pub vit_patch: usize,
    pub vit_dim: usize,
    pub vit_depth: usize,
    pub vit_heads: usize,
    pub vit_mlp_ratio: usize,
    pub regressor_hidden: [usize; 5],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 2000,
            batch_size: 8,
            image_size: 64,
            lr_g: 2e-4,
            lr_d: 2e-4,
            lr_stn: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda_adv: 1.0,
            lambda_l1_v2t: 100.0,
            lambda_l1_t2v: 100.0,
            lambda_cyc: 10.0,
            lambda_theta: 0.01,
            checkpoint_every: 500,
            cycle_target: CycleTarget::Visible,
            unet_stages: 4,
            unet_base: 32,
            disc_layers: 3,
            disc_base: 32,
            vit_patch: 8,
            vit_dim: 128,
            vit_depth: 4,
            vit_heads: 4,
            vit_mlp_ratio: 4,
            regressor_hidden: [128, 64, 64, 32, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) {
        assert!(self.batch_size >= 1, "batch size must be ≥ 1");
        assert!(self.steps >= 1, "steps must be ≥ 1");
        for (name, v) in [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("lr_stn", self.lr_stn),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            assert!(v > 0.0, "{name} must be positive, got {v}");
        }
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_l1_v2t", self.lambda_l1_v2t),
            ("lambda_l1_t2v", self.lambda_l1_t2v),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_theta", self.lambda_theta),
        ] {
            assert!(v >= 0.0, "{name} must be nonnegative, got {v}");
        }
    }
}

/// The four networks trained jointly.
pub struct RegistrationModel<T: Scalar> {
    /// Visible-to-thermal generator (flow 1).
    pub g1: UnetGenerator<T>,
    pub d1: PatchDiscriminator<T>,
    /// Thermal-to-visible generator (flows 2 and 4 — shared weights).
    pub g2: UnetGenerator<T>,
    pub d2: PatchDiscriminator<T>,
    pub vit: VitEncoder<T>,
    pub regressor: AffineRegressor<T>,
    pub config: TrainConfig,
}

impl<T: Scalar> RegistrationModel<T> {
    pub fn new(config: &TrainConfig) -> Self {
        config.validate();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let g1 = UnetGenerator::new(&mut rng, config.image_size, 1, config.unet_stages, config.unet_base);
        let d1 = PatchDiscriminator::new(&mut rng, 2, config.disc_layers, config.disc_base);
        let g2 = UnetGenerator::new(&mut rng, config.image_size, 1, config.unet_stages, config.unet_base);
        let d2 = PatchDiscriminator::new(&mut rng, 2, config.disc_layers, config.disc_base);
        let vit = VitEncoder::new(
            &mut rng,
            VitConfig {
                image_size: config.image_size,
                patch_size: config.vit_patch,
                in_channels: 2,
                dim: config.vit_dim,
                depth: config.vit_depth,
                heads: config.vit_heads,
                mlp_ratio: config.vit_mlp_ratio,
            },
        );
        let regressor = AffineRegressor::new(&mut rng, config.vit_dim, &config.regressor_hidden);
        RegistrationModel {
            g1,
            d1,
            g2,
            d2,
            vit,
            regressor,
            config: config.clone(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.g1.named_params("g1", &mut out);
        self.d1.named_params("d1", &mut out);
        self.g2.named_params("g2", &mut out);
        self.d2.named_params("d2", &mut out);
        self.vit.named_params("vit", &mut out);
        self.regressor.named_params("regressor", &mut out);
        out
    }

    /// Flow 1: translate the visible image to a fake thermal.
    pub fn flow1_v2t(&self, a: &Tensor<T>) -> Tensor<T> {
        self.g1.forward(a)
    }

    /// Flow 2: translate the real thermal to a fake visible.
    pub fn flow2_t2v(&self, b: &Tensor<T>) -> Tensor<T> {
        self.g2.forward(b)
    }

    /// Flow 3: predict θ from the channel-stacked (A, Â₁) and warp only the
    /// real thermal (in [0, 1], where the background is zero) with it.
    /// Returns (θ as N×6, registered thermal in [0, 1]).
    pub fn flow3_register(
        &self,
        a: &Tensor<T>,
        a1_hat: &Tensor<T>,
        b01: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        assert_eq!(a.shape(), a1_hat.shape(), "flow3: A and Â₁ must share a shape");
        assert_eq!(a.shape(), b01.shape(), "flow3: A and B must share a shape");
        let stacked = Tensor::concat(&[a, a1_hat], 1);
        let embedding = self.vit.encode(&stacked);
        let theta = self.regressor.forward(&embedding);
        let b_r01 = warp(b01, &theta);
        (theta, b_r01)
    }

    /// Flow 4: run the registered thermal back through the flow-2 generator.
    pub fn flow4_cycle(&self, b_r: &Tensor<T>) -> Tensor<T> {
        self.g2.forward(b_r)
    }
}

/// Every tensor the four flows produce for one batch.
pub struct FlowTensors<T: Scalar> {
    /// Visible input, [-1, 1].
    pub a: Tensor<T>,
    /// Thermal input, [-1, 1].
    pub b: Tensor<T>,
    /// Thermal input, [0, 1] (warp domain; background is exactly 0).
    pub b01: Tensor<T>,
    /// Fake thermal from flow 1.
    pub b_hat: Tensor<T>,
    /// Fake visible from flow 2.
    pub a1_hat: Tensor<T>,
    /// Predicted parameters, N×6.
    pub theta: Tensor<T>,
    /// Registered thermal, [0, 1].
    pub b_r01: Tensor<T>,
    /// Registered thermal, [-1, 1].
    pub b_r: Tensor<T>,
    /// Cycle output from flow 4.
    pub a2_hat: Tensor<T>,
}

/// Map a [0, 1] image batch to the [-1, 1] network domain.
pub fn to_signed<T: Scalar>(x01: &Tensor<T>) -> Tensor<T> {
    x01.mul_scalar(T::from_f64(2.0)).add_scalar(T::from_f64(-1.0))
}

/// Run all four flows for one batch of [0, 1] images.
pub fn run_flows<T: Scalar>(
    model: &RegistrationModel<T>,
    a01: &Tensor<T>,
    b01: &Tensor<T>,
) -> FlowTensors<T> {
    assert_eq!(a01.shape(), b01.shape(), "flows: image batches must share a shape");
    let a = to_signed(a01);
    let b = to_signed(b01);
    let b_hat = model.flow1_v2t(&a);
    let a1_hat = model.flow2_t2v(&b);
    let (theta, b_r01) = model.flow3_register(&a, &a1_hat, b01);
    let b_r = to_signed(&b_r01);
    let a2_hat = model.flow4_cycle(&b_r);
    FlowTensors {
        a,
        b,
        b01: b01.clone(),
        b_hat,
        a1_hat,
        theta,
        b_r01,
        b_r,
        a2_hat,
    }
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    x.sub(y).abs().mean()
}

/// Mean squared distance to a constant target (least-squares adversarial
/// objective).
pub fn mse_to<T: Scalar>(x: &Tensor<T>, target: f64) -> Tensor<T> {
    let d = x.add_scalar(T::from_f64(-target));
    d.mul(&d).mean()
}

/// Mean over the batch of ‖θ − identity‖².
pub fn theta_identity_penalty<T: Scalar>(theta: &Tensor<T>) -> Tensor<T> {
    let n = theta.shape()[0];
    let id = Tensor::new(
        crate::stn::AffineParams::<T>::identity().to_array().to_vec(),
        &[1, 6],
    );
    let d = theta.sub(&id);
    d.mul(&d).sum().mul_scalar(T::one() / T::from_usize(n))
}

/// Per-step loss scalars, logged every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub d1: f64,
    pub d2: f64,
    pub adv1: f64,
    pub l1_v2t: f64,
    pub adv2: f64,
    pub l1_t2v: f64,
    pub cycle: f64,
    pub theta_reg: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "step,d1,d2,adv1,l1_v2t,adv2,l1_t2v,cycle,theta_reg,total";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.d1,
            self.d2,
            self.adv1,
            self.l1_v2t,
            self.adv2,
            self.l1_t2v,
            self.cycle,
            self.theta_reg,
            self.total
        )
    }

    pub fn check_finite(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("d1", self.d1),
            ("d2", self.d2),
            ("adv1", self.adv1),
            ("l1_v2t", self.l1_v2t),
            ("adv2", self.adv2),
            ("l1_t2v", self.l1_t2v),
            ("cycle", self.cycle),
            ("theta_reg", self.theta_reg),
            ("total", self.total),
        ] {
            if !v.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: self.step,
                    name,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stn::theta_from_tensor;

    pub(super) fn tiny_config() -> TrainConfig {
        TrainConfig {
            image_size: 32,
            unet_stages: 3,
            unet_base: 8,
            disc_layers: 2,
            disc_base: 8,
            vit_patch: 4, // 8x8 grid = 64 tokens
            vit_dim: 32,
            vit_depth: 1,
            vit_heads: 2,
            vit_mlp_ratio: 2,
            regressor_hidden: [16, 16, 16, 16, 16],
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    fn batch01<T: Scalar>(seed: u64, n: usize, size: usize) -> Tensor<T> {
        let mut data = Vec::with_capacity(n * size * size);
        for i in 0..n {
            data.extend(crate::data::procedural_face::<T>(seed + i as u64, size).to_vec());
        }
        Tensor::new(data, &[n, 1, size, size])
    }

    #[test]
    fn flows_preserve_shapes_and_ranges() {
        let cfg = tiny_config();
        let model = RegistrationModel::<f32>::new(&cfg);
        let a01 = batch01(0, 2, 32);
        let b01 = batch01(10, 2, 32);
        let flows = run_flows(&model, &a01, &b01);
        assert_eq!(flows.b_hat.shape(), &[2, 1, 32, 32]);
        assert_eq!(flows.a1_hat.shape(), &[2, 1, 32, 32]);
        assert_eq!(flows.theta.shape(), &[2, 6]);
        assert_eq!(flows.a2_hat.shape(), &[2, 1, 32, 32]);
        assert!(flows.b_hat.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_final_layer_makes_flow1_emit_zero() {
        let cfg = tiny_config();
        let model = RegistrationModel::<f32>::new(&cfg);
        model.g1.zero_final_layer();
        let a = to_signed(&batch01(3, 1, 32));
        let b_hat = model.flow1_v2t(&a);
        assert!(b_hat.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_zero_registration_is_identity() {
        // identity-initialized regressor: θ == identity and B_R == B exactly
        let cfg = tiny_config();
        let model = RegistrationModel::<f32>::new(&cfg);
        let a01 = batch01(5, 2, 32);
        let b01 = batch01(15, 2, 32);
        let flows = run_flows(&model, &a01, &b01);
        for t in theta_from_tensor(&flows.theta) {
            assert_eq!(t, crate::stn::AffineParams::identity());
        }
        assert_eq!(flows.b_r01.to_vec(), b01.to_vec());
    }

    #[test]
    fn cycle_loss_zero_at_constructed_fixed_point() {
        // perfect registration and a perfect translator: the cycle output
        // equals A by construction (lookup), so the loss is exactly zero
        let a = batch01::<f32>(7, 1, 32);
        let a2_hat_lookup = a.clone();
        let loss = l1_loss(&a2_hat_lookup, &a);
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn cycle_loss_nonnegative() {
        let a = batch01::<f32>(8, 1, 32);
        let b = batch01::<f32>(9, 1, 32);
        assert!(l1_loss(&a, &b).item() >= 0.0);
    }

    #[test]
    fn flow2_and_flow4_share_parameters() {
        let cfg = tiny_config();
        let model = RegistrationModel::<f32>::new(&cfg);
        let b = to_signed(&batch01(11, 1, 32));
        let out_before = model.flow4_cycle(&b).to_vec();
        // mutate one g2 parameter; both flow 2 and flow 4 must change
        let params = crate::nn::Module::params(&model.g2);
        let w = &params[0];
        let mut data = w.to_vec();
        for v in &mut data {
            *v += 0.05;
        }
        w.set_data(data);
        let flow2_after = model.flow2_t2v(&b).to_vec();
        let flow4_after = model.flow4_cycle(&b).to_vec();
        assert_ne!(out_before, flow4_after);
        assert_eq!(flow2_after, flow4_after);
    }

    #[test]
    fn registration_loss_gradient_reaches_vit_embedding() {
        // needs a nonzero regressor head (the zero-init head blocks the
        // path); verified against a finite difference on a single weight
        let cfg = tiny_config();
        let model = RegistrationModel::<f64>::new(&cfg);
        let head_w = &crate::nn::Module::params(&model.regressor)[10];
        head_w.set_data(vec![0.01; head_w.numel()]);

        let a01 = batch01(70, 1, 32);
        let b01 = batch01(80, 1, 32);
        let a = to_signed(&a01);

        let loss_of = |model: &RegistrationModel<f64>| {
            let b = to_signed(&b01);
            let a1_hat = model.flow2_t2v(&b);
            let (_, b_r01) = model.flow3_register(&a, &a1_hat, &b01);
            b_r01.sum()
        };

        let loss = loss_of(&model);
        loss.backward().unwrap();
        let embed_w = &crate::nn::Module::params(&model.vit)[0];
        let grad = embed_w.grad().expect("embedding weight must receive gradient");
        let (idx, g) = grad
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        assert!(g.abs() > 1e-12, "no gradient reached the patch embedding");

        // central difference on that single weight
        let eps = 1e-5;
        let base = embed_w.to_vec();
        let mut probe = base.clone();
        probe[idx] = base[idx] + eps;
        embed_w.set_data(probe.clone());
        let up = crate::tensor::no_grad(|| loss_of(&model)).item();
        probe[idx] = base[idx] - eps;
        embed_w.set_data(probe);
        let down = crate::tensor::no_grad(|| loss_of(&model)).item();
        embed_w.set_data(base);
        let numeric = (up - down) / (2.0 * eps);
        let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-8);
        assert!(rel < 1e-4, "finite difference disagrees: {g} vs {numeric} (rel {rel})");
    }

    #[test]
    fn theta_penalty_zero_at_identity() {
        let theta = Tensor::new(vec![1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0], &[1, 6]);
        assert_eq!(theta_identity_penalty(&theta).item(), 0.0);
        let off = Tensor::new(vec![1.0f32, 0.0, 0.5, 0.0, 1.0, 0.0], &[1, 6]);
        assert!((theta_identity_penalty(&off).item() - 0.25).abs() < 1e-6);
    }
}
