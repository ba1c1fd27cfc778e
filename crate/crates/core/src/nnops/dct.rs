//! Orthonormal type-II 2D DCT applied per `(n, c)` plane.
//!
//! Implemented as two matrix products with the `N×N` basis
//! `D[k][x] = a_k cos(pi (2x + 1) k / 2N)`, `a_0 = sqrt(1/N)`,
//! `a_k = sqrt(2/N)`. The basis is orthogonal, so the inverse and the adjoint
//! coincide: the backward pass of `dct2` is `idct2` and vice versa.

use crate::tensor::{gemm, Scalar, Tensor};

/// Row-major `n×n` orthonormal DCT-II basis.
pub fn dct_basis<T: Scalar>(n: usize) -> Vec<T> {
    let mut d = Vec::with_capacity(n * n);
    let nf = n as f64;
    for k in 0..n {
        let a = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for x in 0..n {
            let arg = std::f64::consts::PI * (2 * x + 1) as f64 * k as f64 / (2.0 * nf);
            d.push(T::of(a * arg.cos()));
        }
    }
    d
}

fn transform<T: Scalar>(x: &Tensor<T>, inverse: bool) -> Tensor<T> {
    let [n, c, h, w] = x.dims4();
    let planes = n * c;
    let dh = dct_basis::<T>(h);
    let dw = if w == h { dh.clone() } else { dct_basis::<T>(w) };

    // Along W for all rows at once: X·Dw^T (forward) or X·Dw (inverse).
    let mut rows = vec![T::zero(); x.len()];
    gemm(false, !inverse, planes * h, w, w, T::one(), x.data(), &dw, T::zero(), &mut rows);

    // Along H per plane: Dh·X (forward) or Dh^T·X (inverse).
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let dst = out.data_mut();
    for p in 0..planes {
        let r = p * h * w..(p + 1) * h * w;
        gemm(inverse, false, h, w, h, T::one(), &dh, &rows[r.clone()], T::zero(), &mut dst[r]);
    }
    out
}

pub fn dct2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    transform(x, false)
}

pub fn idct2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    transform(x, true)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nnops::grad_check;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Textbook DCT-II evaluated term by term.
    fn dct2_bruteforce(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
        let pi = std::f64::consts::PI;
        let alpha = |k: usize, n: usize| {
            if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            }
        };
        let mut out = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        acc += plane[y * w + x]
                            * ((pi * (2 * y + 1) as f64 * u as f64) / (2.0 * h as f64)).cos()
                            * ((pi * (2 * x + 1) as f64 * v as f64) / (2.0 * w as f64)).cos();
                    }
                }
                out[u * w + v] = alpha(u, h) * alpha(v, w) * acc;
            }
        }
        out
    }

    #[test]
    fn constant_plane_is_dc_only() {
        let n = 16;
        let c = 0.37f32;
        let y = dct2(&Tensor::full(&[1, 1, n, n], c));
        assert!((y.data()[0] - c * n as f32).abs() < 1e-5 * n as f32);
        for &v in &y.data()[1..] {
            assert!(v.abs() < 1e-5 * n as f32 * c.abs());
        }
    }

    #[test]
    fn matches_bruteforce_definition() {
        for (h, w, seed) in [(8, 8, 1), (8, 6, 2), (5, 12, 3)] {
            let x = random(&[1, 1, h, w], seed);
            let fast = dct2(&x);
            let slow = dct2_bruteforce(x.data(), h, w);
            let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn inverse_of_dc_delta_is_ones() {
        let n = 8;
        let mut x = Tensor::<f32>::zeros(&[1, 1, n, n]);
        x.data_mut()[0] = n as f32;
        let y = idct2(&x);
        assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn roundtrip_and_parseval_f32() {
        let x = random(&[2, 3, 16, 8], 5).cast::<f32>();
        let y = dct2(&x);
        let back = idct2(&y);
        let scale = x.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(back.max_abs_diff(&x) <= 1e-5 * scale as f64);
        let ratio = (y.sq_norm() / x.sq_norm()).sqrt();
        assert!((ratio - 1.0).abs() < 1e-5, "{ratio}");
        let fwd = dct2(&idct2(&x));
        assert!(fwd.max_abs_diff(&x) <= 1e-5 * scale as f64);
    }

    #[test]
    fn linearity() {
        let (x, y) = (random(&[1, 2, 8, 8], 7), random(&[1, 2, 8, 8], 8));
        let (a, b) = (0.3, -1.7);
        let mut combo = x.clone();
        combo.data_mut().iter_mut().zip(y.data()).for_each(|(p, &q)| *p = a * *p + b * q);
        let lhs = dct2(&combo);
        let (dx, dy) = (dct2(&x), dct2(&y));
        for ((l, p), q) in lhs.data().iter().zip(dx.data()).zip(dy.data()) {
            assert!((l - (a * p + b * q)).abs() < 1e-5);
        }
    }

    #[test]
    fn gradients_pass_finite_differences() {
        for seed in 0..5 {
            let x = random(&[1, 1, 8, 8], 100 + seed);
            let r = random(&[1, 1, 8, 8], 200 + seed);
            let dot = |a: &Tensor<f64>| a.data().iter().zip(r.data()).map(|(p, q)| p * q).sum();
            let rep = grad_check(|x| (dot(&dct2(x)), idct2(&r)), &x, 1e-3);
            assert!(rep.passed, "dct2 {rep:?}");
            let rep = grad_check(|x| (dot(&idct2(x)), dct2(&r)), &x, 1e-3);
            assert!(rep.passed, "idct2 {rep:?}");
        }
        let x = random(&[1, 1, 8, 8], 9);
        let rep = grad_check(|x| (dct2(x).sum(), idct2(&Tensor::full(&[1, 1, 8, 8], 1.0))), &x, 1e-3);
        assert!(rep.passed);
    }
}
