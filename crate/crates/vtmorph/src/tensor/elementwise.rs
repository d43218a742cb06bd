//! Elementwise ops: broadcasting binaries, activations, pointwise maps.

use crate::scalar::Scalar;

use super::broadcast::{broadcast_shapes, broadcast_to, reduce_to_shape};
use super::Tensor;

fn assert_finite_in<T: Scalar>(op: &str, t: &Tensor<T>) {
    if !t.data().iter().all(|v| v.is_finite()) {
        panic!("{op}: non-finite input value in tensor of shape {:?}", t.shape());
    }
}

impl<T: Scalar> Tensor<T> {
    fn binary_op(
        &self,
        rhs: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        // (grad_out, a_bc, b_bc) -> (df/da, df/db) per element, at out shape
        df: impl Fn(T, T, T) -> (T, T) + 'static,
    ) -> Tensor<T> {
        assert_finite_in(op, self);
        assert_finite_in(op, rhs);
        let out_shape = broadcast_shapes(self.shape(), rhs.shape()).unwrap_or_else(|| {
            panic!(
                "{op}: shapes {:?} and {:?} are not broadcast-compatible",
                self.shape(),
                rhs.shape()
            )
        });
        let a = broadcast_to(&self.data(), self.shape(), &out_shape);
        let b = broadcast_to(&rhs.data(), rhs.shape(), &out_shape);
        let out: Vec<T> = a.iter().zip(&b).map(|(&x, &y)| f(x, y)).collect();

        let a_shape = self.shape().to_vec();
        let b_shape = rhs.shape().to_vec();
        let g_shape = out_shape.clone();
        Tensor::from_op(
            out,
            out_shape,
            vec![self.clone(), rhs.clone()],
            move |g| {
                let mut ga = vec![T::zero(); g.len()];
                let mut gb = vec![T::zero(); g.len()];
                for i in 0..g.len() {
                    let (da, db) = df(g[i], a[i], b[i]);
                    ga[i] = da;
                    gb[i] = db;
                }
                vec![
                    Some(reduce_to_shape(&ga, &g_shape, &a_shape)),
                    Some(reduce_to_shape(&gb, &g_shape, &b_shape)),
                ]
            },
        )
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Tensor<T> {
        self.binary_op(rhs, "add", |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Tensor<T> {
        self.binary_op(rhs, "sub", |a, b| a - b, |g, _, _| (g, -g))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        self.binary_op(rhs, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    fn unary_op(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        // (grad_out, x, y) -> df/dx per element
        df: impl Fn(T, T, T) -> T + 'static,
    ) -> Tensor<T> {
        assert_finite_in(op, self);
        let x = self.to_vec();
        let out: Vec<T> = x.iter().map(|&v| f(v)).collect();
        let y = out.clone();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g| {
                let gx: Vec<T> = g
                    .iter()
                    .zip(x.iter().zip(&y))
                    .map(|(&gi, (&xi, &yi))| df(gi, xi, yi))
                    .collect();
                vec![Some(gx)]
            },
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary_op("neg", |v| -v, |g, _, _| -g)
    }

    pub fn abs(&self) -> Tensor<T> {
        self.unary_op(
            "abs",
            |v| v.abs(),
            |g, x, _| if x < T::zero() { -g } else { g },
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary_op("exp", |v| v.exp(), |g, _, y| g * y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary_op("ln", |v| v.ln(), |g, x, _| g / x)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary_op(
            "relu",
            |v| if v > T::zero() { v } else { T::zero() },
            |g, x, _| if x > T::zero() { g } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::from_f64(slope);
        self.unary_op(
            "leaky_relu",
            move |v| if v > T::zero() { v } else { v * s },
            move |g, x, _| if x > T::zero() { g } else { g * s },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary_op(
            "sigmoid",
            |v| {
                // stable in both tails
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            |g, _, y| g * y * (T::one() - y),
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary_op("tanh", |v| v.tanh(), |g, _, y| g * (T::one() - y * y))
    }

    /// x * c (constant).
    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        self.unary_op("mul_scalar", move |v| v * c, move |g, _, _| g * c)
    }

    /// x + c (constant).
    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary_op("add_scalar", move |v| v + c, |g, _, _| g)
    }
}
