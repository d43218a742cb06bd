//! NumPy-style broadcasting for elementwise binary ops.

use crate::scalar::Scalar;

use super::{numel, strides_of};

/// Broadcast two shapes, aligning from the right. None when incompatible.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides for reading `shape` as if it had `out_shape`, with stride 0 on
/// broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = strides_of(shape);
    let offset = out_shape.len() - shape.len();
    let mut out = vec![0; out_shape.len()];
    for i in 0..shape.len() {
        out[offset + i] = if shape[i] == 1 { 0 } else { strides[i] };
    }
    out
}

/// Materialize `data` (of `shape`) at `out_shape`.
pub(crate) fn broadcast_to<T: Scalar>(data: &[T], shape: &[usize], out_shape: &[usize]) -> Vec<T> {
    if shape == out_shape {
        return data.to_vec();
    }
    let n = numel(out_shape);
    let bstrides = broadcast_strides(shape, out_shape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(data[off]);
        // odometer increment
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            off += bstrides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= bstrides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Sum `grad` (of `grad_shape`) down to `target_shape` — the adjoint of
/// broadcasting.
pub(crate) fn reduce_to_shape<T: Scalar>(
    grad: &[T],
    grad_shape: &[usize],
    target_shape: &[usize],
) -> Vec<T> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let mut out = vec![T::zero(); numel(target_shape)];
    let bstrides = broadcast_strides(target_shape, grad_shape);
    let n = numel(grad_shape);
    let mut idx = vec![0usize; grad_shape.len()];
    let mut off = 0usize;
    for flat in 0..n {
        out[off] += grad[flat];
        for ax in (0..grad_shape.len()).rev() {
            idx[ax] += 1;
            off += bstrides[ax];
            if idx[ax] < grad_shape[ax] {
                break;
            }
            off -= bstrides[ax] * grad_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
