use std::cell::Cell;

use crate::tensor::Scalar;

thread_local! {
    /// Running hash of ReLU sign patterns while a recording is active.
    static RELU_PATTERN: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Runs `f` and returns a hash of every ReLU on/off decision it made on this
/// thread. Two evaluations with equal hashes took the same linear piece.
pub fn record_relu_pattern<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = RELU_PATTERN.with(|p| p.replace(Some(0xcbf2_9ce4_8422_2325)));
    let out = f();
    let hash = RELU_PATTERN.with(|p| p.replace(outer)).unwrap_or(0);
    (out, hash)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2 pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x · Φ(x)`.
pub fn gelu<T: Scalar>(x: &[T]) -> Vec<T> {
    let half = T::of(0.5);
    let k = T::of(INV_SQRT_2);
    x.iter().map(|&v| v * half * (T::one() + (v * k).erf())).collect()
}

/// `dx = dy · (Φ(x) + x φ(x))`.
pub fn gelu_backward<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    let half = T::of(0.5);
    let k = T::of(INV_SQRT_2);
    let c = T::of(INV_SQRT_2PI);
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| {
            let cdf = half * (T::one() + (v * k).erf());
            let pdf = c * (-half * v * v).exp();
            g * (cdf + v * pdf)
        })
        .collect()
}

pub fn relu<T: Scalar>(x: &mut [T]) {
    if let Some(mut h) = RELU_PATTERN.with(|p| p.get()) {
        for v in x.iter() {
            h = (h ^ u64::from(*v > T::zero())).wrapping_mul(0x0100_0000_01b3);
        }
        RELU_PATTERN.with(|p| p.set(Some(h)));
    }
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Gradient through ReLU given its output `y`.
pub fn relu_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}
