//! Matrix products (2-D and batched) and transposes.

use crate::scalar::Scalar;

use super::Tensor;

impl<T: Scalar> Tensor<T> {
    /// Matrix product over the last two axes. 2-D×2-D, or batched with equal
    /// leading dimensions: (..., m, k) × (..., k, n) -> (..., m, n).
    pub fn matmul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        let (sa, sb) = (self.shape(), rhs.shape());
        assert!(
            sa.len() >= 2 && sb.len() >= 2,
            "matmul: both operands must be at least 2-D, got {sa:?} and {sb:?}"
        );
        assert_eq!(
            sa[..sa.len() - 2],
            sb[..sb.len() - 2],
            "matmul: batch dimensions differ: {sa:?} vs {sb:?}"
        );
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        assert_eq!(
            k, k2,
            "matmul: inner dimensions differ: {sa:?} vs {sb:?}"
        );
        let batch: usize = sa[..sa.len() - 2].iter().product();

        let a = self.to_vec();
        let b = rhs.to_vec();
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            T::gemm(
                false,
                false,
                m,
                k,
                n,
                T::one(),
                &a[i * m * k..(i + 1) * m * k],
                &b[i * k * n..(i + 1) * k * n],
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }

        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);

        Tensor::from_op(
            out,
            out_shape,
            vec![self.clone(), rhs.clone()],
            move |g| {
                // dA = g · Bᵀ, dB = Aᵀ · g, per batch slice.
                let mut da = vec![T::zero(); batch * m * k];
                let mut db = vec![T::zero(); batch * k * n];
                for i in 0..batch {
                    let gs = &g[i * m * n..(i + 1) * m * n];
                    T::gemm(
                        false,
                        true,
                        m,
                        n,
                        k,
                        T::one(),
                        gs,
                        &b[i * k * n..(i + 1) * k * n],
                        T::zero(),
                        &mut da[i * m * k..(i + 1) * m * k],
                    );
                    T::gemm(
                        true,
                        false,
                        k,
                        m,
                        n,
                        T::one(),
                        &a[i * m * k..(i + 1) * m * k],
                        gs,
                        T::zero(),
                        &mut db[i * k * n..(i + 1) * k * n],
                    );
                }
                vec![Some(da), Some(db)]
            },
        )
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(
            shape.len() >= 2,
            "transpose: needs at least 2 dimensions, got {shape:?}"
        );
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch: usize = shape[..shape.len() - 2].iter().product();

        let transpose_buf = move |src: &[T]| {
            let mut dst = vec![T::zero(); src.len()];
            for i in 0..batch {
                let s = &src[i * r * c..(i + 1) * r * c];
                let d = &mut dst[i * r * c..(i + 1) * r * c];
                for row in 0..r {
                    for col in 0..c {
                        d[col * r + row] = s[row * c + col];
                    }
                }
            }
            dst
        };

        let out = transpose_buf(&self.data());
        let mut out_shape = shape.clone();
        let len = out_shape.len();
        out_shape.swap(len - 2, len - 1);

        let inverse = move |src: &[T]| {
            // transposing back swaps r and c
            let mut dst = vec![T::zero(); src.len()];
            for i in 0..batch {
                let s = &src[i * r * c..(i + 1) * r * c];
                let d = &mut dst[i * r * c..(i + 1) * r * c];
                for col in 0..c {
                    for row in 0..r {
                        d[row * c + col] = s[col * r + row];
                    }
                }
            }
            dst
        };

        Tensor::from_op(out, out_shape, vec![self.clone()], move |g| {
            vec![Some(inverse(g))]
        })
    }
}
