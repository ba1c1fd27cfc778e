//! Linear interpolation along the slice (channel) axis.
//!
//! Shared by the network's global residual and the linear baseline, so the
//! two agree bit for bit.

use crate::tensor::{Scalar, Tensor};

/// For each of the `(s - 1)·r + 1` output slices: the lower source slice and
/// the weight of the next one. Anchors get weight 0.
pub fn lerp_plan(s: usize, r: usize) -> Vec<(usize, f64)> {
    let out = (s - 1) * r + 1;
    (0..out)
        .map(|j| {
            let (k, rem) = (j / r, j % r);
            (k, rem as f64 / r as f64)
        })
        .collect()
}

/// Blends two planes into `dst`: `(1 - f)·a + f·b`, or a copy of `a` at `f = 0`.
pub fn lerp_plane<T: Scalar>(a: &[T], b: Option<&[T]>, f: f64, dst: &mut [T]) {
    match b {
        Some(b) if f != 0.0 => {
            let (wa, wb) = (T::of(1.0 - f), T::of(f));
            for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
                *d = wa * x + wb * y;
            }
        }
        _ => dst.copy_from_slice(a),
    }
}

/// `[N, S, h, w] -> [N, (S-1)·r+1, h, w]`.
pub fn lerp_channels<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let [n, s, h, w] = x.dims4();
    let plan = lerp_plan(s, r);
    let mut y = Tensor::zeros(&[n, plan.len(), h, w]);
    for b in 0..n {
        for (j, &(k, f)) in plan.iter().enumerate() {
            let next = (k + 1 < s).then(|| x.plane(b, k + 1));
            lerp_plane(x.plane(b, k), next, f, y.plane_mut(b, j));
        }
    }
    y
}

/// Adjoint of [`lerp_channels`].
pub fn lerp_channels_backward<T: Scalar>(dy: &Tensor<T>, s: usize, r: usize) -> Tensor<T> {
    let [n, _, h, w] = dy.dims4();
    let plan = lerp_plan(s, r);
    let mut dx = Tensor::zeros(&[n, s, h, w]);
    for b in 0..n {
        for (j, &(k, f)) in plan.iter().enumerate() {
            let g = dy.plane(b, j).to_vec();
            if f == 0.0 || k + 1 >= s {
                dx.plane_mut(b, k).iter_mut().zip(&g).for_each(|(d, &v)| *d += v);
            } else {
                let (wa, wb) = (T::of(1.0 - f), T::of(f));
                dx.plane_mut(b, k).iter_mut().zip(&g).for_each(|(d, &v)| *d += wa * v);
                dx.plane_mut(b, k + 1).iter_mut().zip(&g).for_each(|(d, &v)| *d += wb * v);
            }
        }
    }
    dx
}
