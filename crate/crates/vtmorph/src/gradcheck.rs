//! Finite-difference verification of every differentiable op.
//!
//! [`grad_check`] compares reverse-mode gradients against central
//! differences. [`op_suite`] registers one named check per op; the CLI's
//! verification command and the acceptance tests both run it.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::stn::{affine_grid, grid_sample};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GradCheckError {
    #[error("eps {0} outside [1e-7, 1e-3]")]
    EpsOutOfRange(f64),
    #[error("function under test returned shape {0:?}, expected a scalar")]
    NonScalar(Vec<usize>),
    #[error("non-finite value encountered while evaluating the function under test")]
    NonFinite,
}

/// Convert the engine's non-finite rejection (a panic in the op layer) into
/// a reported failure; let any other panic keep unwinding.
fn catch_non_finite<R>(f: impl FnOnce() -> Result<R, GradCheckError>) -> Result<R, GradCheckError> {
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("");
            if msg.contains("non-finite") {
                Err(GradCheckError::NonFinite)
            } else {
                std::panic::resume_unwind(payload)
            }
        }
    }
}

/// Max relative error between the reverse-mode gradient of `f` at `x` and
/// central finite differences with step `eps`.
///
/// Relative error per coordinate is |analytic − numeric| divided by
/// max(|analytic|, |numeric|, 1e-8). A function that never touches `x`
/// yields zero on both sides and therefore error 0. Non-finite values
/// anywhere in an evaluation surface as [`GradCheckError::NonFinite`].
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64, GradCheckError>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Tensor<T>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(GradCheckError::EpsOutOfRange(eps));
    }

    let x_var = Tensor::param(x.to_vec(), x.shape());
    let analytic = catch_non_finite(|| {
        let loss = f(&x_var);
        if loss.numel() != 1 {
            return Err(GradCheckError::NonScalar(loss.shape().to_vec()));
        }
        if !loss.item().is_finite() {
            return Err(GradCheckError::NonFinite);
        }
        if loss.requires_grad() {
            loss.backward().expect("scalar tracked loss must backprop");
            Ok(x_var
                .grad()
                .unwrap_or_else(|| vec![T::zero(); x_var.numel()]))
        } else {
            // f ignores x entirely; the true gradient is zero
            Ok(vec![T::zero(); x_var.numel()])
        }
    })?;

    let base = x.to_vec();
    let eval = |data: Vec<T>| -> Result<f64, GradCheckError> {
        catch_non_finite(|| {
            let probe = Tensor::new(data, x.shape());
            let out = no_grad(|| f(&probe));
            if out.numel() != 1 {
                return Err(GradCheckError::NonScalar(out.shape().to_vec()));
            }
            let v = out.item().as_f64();
            if !v.is_finite() {
                return Err(GradCheckError::NonFinite);
            }
            Ok(v)
        })
    };

    let mut max_err = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] = plus[i] + T::from_f64(eps);
        let mut minus = base.clone();
        minus[i] = minus[i] - T::from_f64(eps);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic[i].as_f64();
        if !a.is_finite() {
            return Err(GradCheckError::NonFinite);
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max((a - numeric).abs() / denom);
    }
    Ok(max_err)
}

/// One registered differentiable op with its finite-difference check.
pub struct OpCheck {
    pub name: &'static str,
    run: Box<dyn Fn(u64) -> Result<f64, GradCheckError> + Send + Sync>,
}

impl OpCheck {
    /// Max relative error for this op at one seed.
    pub fn run(&self, seed: u64) -> Result<f64, GradCheckError> {
        (self.run)(seed)
    }
}

const EPS: f64 = 1e-5;

/// Uniform values in [-2, 2] kept at least `margin` away from every kink.
fn rand_away_from(rng: &mut ChaCha8Rng, n: usize, kinks: &[f64], margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if kinks.iter().all(|k| (v - k).abs() > margin) {
                break v;
            }
        })
        .collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(), shape)
}

fn rand_tensor_guarded(rng: &mut ChaCha8Rng, shape: &[usize], kinks: &[f64]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(rand_away_from(rng, n, kinks, 1e-3), shape)
}

macro_rules! check {
    ($name:literal, $body:expr) => {
        OpCheck {
            name: $name,
            run: Box::new($body),
        }
    };
}

/// Every differentiable op, registered exactly once.
pub fn op_suite() -> Vec<OpCheck> {
    vec![
        check!("add", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, 3]);
            let b = rand_tensor(&mut rng, &[3]); // broadcast path
            let e1 = grad_check(|x| x.add(&b).mul(x).sum(), &x, EPS)?;
            let e2 = grad_check(|b| x.add(b).mul(&x).sum(), &b, EPS)?;
            Ok(e1.max(e2))
        }),
        check!("sub", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, 2]);
            let y = rand_tensor(&mut rng, &[2, 2]);
            grad_check(|x| x.sub(&y).mul(x).sum(), &x, EPS)
        }),
        check!("mul", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, 3]);
            let y = rand_tensor(&mut rng, &[1, 3]); // broadcast path
            let e1 = grad_check(|x| x.mul(&y).sum(), &x, EPS)?;
            let e2 = grad_check(|y| x.mul(y).sum(), &y, EPS)?;
            Ok(e1.max(e2))
        }),
        check!("neg", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[5]);
            grad_check(|x| x.neg().mul(x).sum(), &x, EPS)
        }),
        check!("abs", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor_guarded(&mut rng, &[6], &[0.0]);
            grad_check(|x| x.abs().sum(), &x, EPS)
        }),
        check!("exp", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[4]);
            grad_check(|x| x.exp().sum(), &x, EPS)
        }),
        check!("ln", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..5).map(|_| rng.gen_range(0.5..2.5)).collect();
            let x = Tensor::new(data, &[5]);
            grad_check(|x| x.ln().sum(), &x, EPS)
        }),
        check!("relu", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor_guarded(&mut rng, &[8], &[0.0]);
            grad_check(|x| x.relu().mul(x).sum(), &x, EPS)
        }),
        check!("leaky_relu", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor_guarded(&mut rng, &[8], &[0.0]);
            grad_check(|x| x.leaky_relu(0.2).sum(), &x, EPS)
        }),
        check!("sigmoid", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[6]);
            grad_check(|x| x.sigmoid().sum(), &x, EPS)
        }),
        check!("tanh", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[6]);
            grad_check(|x| x.tanh().sum(), &x, EPS)
        }),
        check!("add_scalar", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[4]);
            grad_check(|x| x.add_scalar(0.7).mul(x).sum(), &x, EPS)
        }),
        check!("mul_scalar", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[4]);
            grad_check(|x| x.mul_scalar(-1.3).mul(x).sum(), &x, EPS)
        }),
        check!("softmax", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, 4]);
            let w = rand_tensor(&mut rng, &[2, 4]);
            grad_check(|x| x.softmax().mul(&w).sum(), &x, EPS)
        }),
        check!("softmax_cross_entropy", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = rand_tensor(&mut rng, &[3, 4]);
            let mut onehot = vec![0.0; 12];
            for r in 0..3 {
                onehot[r * 4 + rng.gen_range(0..4)] = 1.0;
            }
            let y = Tensor::new(onehot, &[3, 4]);
            grad_check(
                |x| x.softmax().ln().mul(&y).sum().mul_scalar(-1.0 / 3.0),
                &logits,
                EPS,
            )
        }),
        check!("matmul", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_tensor(&mut rng, &[2, 3]);
            let b = rand_tensor(&mut rng, &[3, 2]);
            let e1 = grad_check(|a| a.matmul(&b).sum(), &a, EPS)?;
            let e2 = grad_check(|b| a.matmul(b).sum(), &b, EPS)?;
            Ok(e1.max(e2))
        }),
        check!("matmul_batched", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_tensor(&mut rng, &[2, 2, 2]);
            let b = rand_tensor(&mut rng, &[2, 2, 2]);
            let e1 = grad_check(|a| a.matmul(&b).mul(a).sum(), &a, EPS)?;
            let e2 = grad_check(|b| a.matmul(b).sum(), &b, EPS)?;
            Ok(e1.max(e2))
        }),
        check!("transpose", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, 3]);
            let w = rand_tensor(&mut rng, &[3, 2]);
            grad_check(|x| x.transpose().mul(&w).sum(), &x, EPS)
        }),
        check!("reshape", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, 6]);
            grad_check(|x| x.reshape(&[3, 4]).mul(&x.reshape(&[3, 4])).sum(), &x, EPS)
        }),
        check!("concat", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, 2]);
            let y = rand_tensor(&mut rng, &[2, 3]);
            let e1 = grad_check(
                |x| {
                    let c = Tensor::concat(&[x, &y], 1);
                    c.mul(&c).sum()
                },
                &x,
                EPS,
            )?;
            let e2 = grad_check(
                |y| {
                    let c = Tensor::concat(&[&x, y], 1);
                    c.mul(&c).sum()
                },
                &y,
                EPS,
            )?;
            Ok(e1.max(e2))
        }),
        check!("slice", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[3, 4]);
            grad_check(
                |x| {
                    let s = x.slice(1, 1, 3);
                    s.mul(&s).sum()
                },
                &x,
                EPS,
            )
        }),
        check!("sum", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[7]);
            grad_check(|x| x.mul(x).sum(), &x, EPS)
        }),
        check!("mean", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[9]);
            grad_check(|x| x.mul(x).mean(), &x, EPS)
        }),
        check!("sum_axis", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, 3, 2]);
            grad_check(
                |x| {
                    let s = x.sum_axis(1);
                    s.mul(&s).sum()
                },
                &x,
                EPS,
            )
        }),
        check!("mean_axis", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, 4]);
            grad_check(
                |x| {
                    let s = x.mean_axis(0);
                    s.mul(&s).sum()
                },
                &x,
                EPS,
            )
        }),
        check!("conv2d", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[1, 2, 4, 4]);
            let w = rand_tensor(&mut rng, &[2, 2, 3, 3]);
            let e1 = grad_check(|x| x.conv2d(&w, 2, 1).sum(), &x, EPS)?;
            let e2 = grad_check(|w| x.conv2d(w, 2, 1).mul(&x.conv2d(w, 2, 1)).sum(), &w, EPS)?;
            Ok(e1.max(e2))
        }),
        check!("conv_transpose2d", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[1, 2, 3, 3]);
            let w = rand_tensor(&mut rng, &[2, 1, 4, 4]);
            let e1 = grad_check(|x| x.conv_transpose2d(&w, 2, 1).sum(), &x, EPS)?;
            let e2 = grad_check(
                |w| {
                    let y = x.conv_transpose2d(w, 2, 1);
                    y.mul(&y).sum()
                },
                &w,
                EPS,
            )?;
            Ok(e1.max(e2))
        }),
        check!("avg_pool2d", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[1, 1, 4, 4]);
            grad_check(
                |x| {
                    let p = x.avg_pool2d(2, 2);
                    p.mul(&p).sum()
                },
                &x,
                EPS,
            )
        }),
        check!("max_pool2d", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // well-separated values so no window has near-ties at the max
            let mut vals: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 2.0).collect();
            use rand::seq::SliceRandom;
            vals.shuffle(&mut rng);
            let x = Tensor::new(vals, &[1, 1, 4, 4]);
            grad_check(
                |x| {
                    let p = x.max_pool2d(2, 2);
                    p.mul(&p).sum()
                },
                &x,
                EPS,
            )
        }),
        check!("instance_norm", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[1, 2, 2, 2]);
            let g = rand_tensor(&mut rng, &[2]);
            let b = rand_tensor(&mut rng, &[2]);
            let w = rand_tensor(&mut rng, &[1, 2, 2, 2]);
            let e1 = grad_check(|x| x.instance_norm(&g, &b, 1e-5).mul(&w).sum(), &x, EPS)?;
            let e2 = grad_check(|g| x.instance_norm(g, &b, 1e-5).mul(&w).sum(), &g, EPS)?;
            let e3 = grad_check(|b| x.instance_norm(&g, b, 1e-5).mul(&w).sum(), &b, EPS)?;
            Ok(e1.max(e2).max(e3))
        }),
        check!("layer_norm", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[3, 4]);
            let g = rand_tensor(&mut rng, &[4]);
            let b = rand_tensor(&mut rng, &[4]);
            let w = rand_tensor(&mut rng, &[3, 4]);
            let e1 = grad_check(|x| x.layer_norm(&g, &b, 1e-5).mul(&w).sum(), &x, EPS)?;
            let e2 = grad_check(|g| x.layer_norm(g, &b, 1e-5).mul(&w).sum(), &g, EPS)?;
            Ok(e1.max(e2))
        }),
        check!("to_patches", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[1, 1, 4, 4]);
            grad_check(
                |x| {
                    let p = x.to_patches(2);
                    p.mul(&p).sum()
                },
                &x,
                EPS,
            )
        }),
        check!("affine_grid", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = rand_tensor(&mut rng, &[1, 6]);
            let w = rand_tensor(&mut rng, &[1, 2, 3, 2]);
            grad_check(|t| affine_grid(t, 2, 3).mul(&w).sum(), &theta, EPS)
        }),
        check!("grid_sample", |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = rand_tensor(&mut rng, &[1, 1, 4, 4]);
            // keep source coordinates strictly interior and away from the
            // integer lattice where bilinear weights kink
            let n = 2 * 2 * 2;
            let coords: Vec<f64> = (0..n)
                .map(|_| {
                    let cell: i64 = rng.gen_range(0..3);
                    let frac: f64 = rng.gen_range(0.2..0.8);
                    // pixel position in [0, 3]; invert the center mapping
                    let u = cell as f64 + frac;
                    (u + 0.5) * 2.0 / 4.0 - 1.0
                })
                .collect();
            let grid = Tensor::new(coords, &[1, 2, 2, 2]);
            let e1 = grad_check(|im| grid_sample(im, &grid).sum(), &img, EPS)?;
            let e2 = grad_check(
                |g| {
                    let s = grid_sample(&img, g);
                    s.mul(&s).sum()
                },
                &grid,
                EPS,
            )?;
            Ok(e1.max(e2))
        }),
    ]
}

/// Result of one suite run.
pub struct SuiteReport {
    /// (op name, worst error over all seeds) in registration order.
    pub results: Vec<(&'static str, f64)>,
    pub threshold: f64,
}

impl SuiteReport {
    pub fn failures(&self) -> Vec<(&'static str, f64)> {
        self.results
            .iter()
            .filter(|(_, e)| !e.is_finite() || *e >= self.threshold)
            .copied()
            .collect()
    }

    pub fn worst(&self) -> (&'static str, f64) {
        self.results
            .iter()
            .copied()
            .fold(("", 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
    }
}

/// Run every registered op over `seeds` seeds. `corrupt` injects an error
/// into the named op's measured result — a hook for testing the failure
/// path end to end.
pub fn run_suite(seeds: u64, threshold: f64, corrupt: Option<&str>) -> SuiteReport {
    let mut results = Vec::new();
    for op in op_suite() {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let err = match op.run(seed) {
                Ok(e) => e,
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(err);
        }
        if corrupt == Some(op.name) {
            worst += 1.0;
        }
        results.push((op.name, worst));
    }
    SuiteReport { results, threshold }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_nearly_exact() {
        let x = Tensor::new(vec![0.3f64, -1.2, 2.0, 0.9], &[4]);
        let err = grad_check(|x| x.mul(x).sum(), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn softmax_cross_entropy_passes() {
        let logits = Tensor::new(vec![0.2f64, -0.5, 1.3, 0.0, 0.7, -1.1], &[2, 3]);
        let y = Tensor::new(vec![1.0f64, 0.0, 0.0, 0.0, 0.0, 1.0], &[2, 3]);
        let err = grad_check(
            |x| x.softmax().ln().mul(&y).sum().mul_scalar(-0.5),
            &logits,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "error {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::new(vec![1.0f64, 2.0], &[2]);
        let err = grad_check(|_| Tensor::scalar(5.0f64), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let x = Tensor::new(vec![1.0f64], &[1]);
        assert_eq!(
            grad_check(|x| x.sum(), &x, 1e-2).unwrap_err(),
            GradCheckError::EpsOutOfRange(1e-2)
        );
    }

    #[test]
    fn non_finite_reported_not_silent() {
        let x = Tensor::new(vec![800.0f64], &[1]);
        // exp overflows to Inf inside the probe
        let err = grad_check(|x| x.exp().mul_scalar(2.0).sum(), &x, 1e-5);
        assert_eq!(err.unwrap_err(), GradCheckError::NonFinite);
    }

    #[test]
    fn suite_runs_each_op_once_with_unique_names() {
        let ops = op_suite();
        let mut names: Vec<_> = ops.iter().map(|o| o.name).collect();
        let total = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), total, "duplicate op registration");
    }

    #[test]
    fn suite_passes_at_a_few_seeds() {
        let report = run_suite(3, 1e-4, None);
        let failures = report.failures();
        assert!(failures.is_empty(), "failing ops: {failures:?}");
    }

    #[test]
    fn corruption_hook_fails_named_op() {
        let report = run_suite(1, 1e-4, Some("tanh"));
        let failures = report.failures();
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].0, "tanh");
    }
}
