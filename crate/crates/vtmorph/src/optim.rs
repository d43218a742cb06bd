//! Adam with bias correction.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: per-parameter moment buffers plus a step counter.
/// Parameter tensors are shared handles; `step` mutates them in place.
pub struct Adam<T: Scalar> {
    params: Vec<Tensor<T>>,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
    steps: u64,
    cfg: AdamConfig,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, cfg: AdamConfig) -> Self {
        assert!(cfg.lr > 0.0, "adam: learning rate must be positive, got {}", cfg.lr);
        assert!(
            cfg.beta1 > 0.0 && cfg.beta1 < 1.0 && cfg.beta2 > 0.0 && cfg.beta2 < 1.0,
            "adam: betas must lie in (0, 1), got ({}, {})",
            cfg.beta1,
            cfg.beta2
        );
        assert!(cfg.eps > 0.0, "adam: epsilon must be positive, got {}", cfg.eps);
        let first_moment = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        let second_moment = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Adam {
            params,
            first_moment,
            second_moment,
            steps: 0,
            cfg,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One update from the gradients currently stored on the parameters.
    /// Parameters with no accumulated gradient are left untouched.
    pub fn step(&mut self) {
        self.steps += 1;
        let t = self.steps as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let lr = T::from_f64(self.cfg.lr);
        let eps = T::from_f64(self.cfg.eps);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);

        for (i, p) in self.params.iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            assert_eq!(
                grad.len(),
                p.numel(),
                "adam: gradient length {} does not match parameter {:?}",
                grad.len(),
                p.shape()
            );
            let mut data = p.to_vec();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] = data[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_data(data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64) -> (Tensor<f64>, Adam<f64>) {
        let p = Tensor::param(vec![value], &[1]);
        let opt = Adam::new(
            vec![p.clone()],
            AdamConfig {
                lr: 0.1,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        );
        (p, opt)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (p, mut opt) = single_param(3.0);
        p.add_grad(&[0.0]);
        opt.step();
        assert_eq!(p.to_vec(), vec![3.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // hand-computed first Adam step: m̂ = g, v̂ = g², Δ = lr·g/(|g|+ε) ≈ lr
        let (p, mut opt) = single_param(0.0);
        p.add_grad(&[1.0]);
        opt.step();
        let expected = -0.1 * 1.0 / (1.0f64.sqrt() + 1e-8);
        let got = p.to_vec()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!((got + 0.1).abs() < 1e-8);
    }

    #[test]
    fn repeated_identical_gradients_move_monotonically() {
        let (p, mut opt) = single_param(1.0);
        let mut prev = 1.0;
        for _ in 0..5 {
            p.zero_grad();
            p.add_grad(&[2.0]);
            opt.step();
            let cur = p.to_vec()[0];
            assert!(cur < prev, "parameter must keep moving against the gradient");
            prev = cur;
        }
    }

    #[test]
    #[should_panic(expected = "learning rate must be positive")]
    fn non_positive_lr_rejected() {
        let p = Tensor::<f32>::param(vec![0.0], &[1]);
        let _ = Adam::new(
            vec![p],
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
        );
    }
}
