use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point element type for every kernel in this crate.
///
/// Training normally runs in `f32`; gradient verification runs in `f64`.
/// The trait carries the few extras the kernels need beyond [`num_traits::Float`]:
/// exact byte serialization for checkpoints and a GEMM dispatched to the
/// platform kernels in `matrixmultiply`.
pub trait Scalar:
    Float + NumAssignOps + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Type tag written into checkpoint headers.
    const DTYPE: &'static str;
    /// Size of one element in serialized form.
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    /// C ← alpha * op(A) * op(B) + beta * C, row-major, where op is an
    /// optional transpose. A is m×k (k×m when transposed), B is k×n, C is m×n.
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! strides {
    ($trans:expr, $rows:expr, $cols:expr) => {
        if $trans {
            (1isize, $rows as isize)
        } else {
            ($cols as isize, 1isize)
        }
    };
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    ) {
        debug_assert_eq!(a.len(), m * k, "gemm: A buffer length");
        debug_assert_eq!(b.len(), k * n, "gemm: B buffer length");
        debug_assert_eq!(c.len(), m * n, "gemm: C buffer length");
        let (rsa, csa) = strides!(trans_a, m, k);
        let (rsb, csb) = strides!(trans_b, k, n);
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    ) {
        debug_assert_eq!(a.len(), m * k, "gemm: A buffer length");
        debug_assert_eq!(b.len(), k * n, "gemm: B buffer length");
        debug_assert_eq!(c.len(), m * n, "gemm: C buffer length");
        let (rsa, csa) = strides!(trans_a, m, k);
        let (rsb, csb) = strides!(trans_b, k, n);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}
