//! Layer normalization over the middle axis of an `[outer, len, inner]` view.
//!
//! For a rank-4 activation normalized over channels this is
//! `outer = N, len = C, inner = H·W`; for a window sequence
//! `[N, n_windows, C, p²]` it is `outer = N·n_windows, len = C, inner = p²`.

use super::{join, Parameters};
use crate::tensor::{Scalar, Tensor};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

/// Normalized activations and per-position inverse standard deviations.
#[derive(Clone, Debug)]
pub struct LnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    /// Affine initialized to `(1, 0)`.
    pub fn new(len: usize) -> Self {
        LayerNorm { gamma: Tensor::full(&[len], T::one()), beta: Tensor::zeros(&[len]), eps: LN_EPS }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn forward_axis(&self, x: &[T], outer: usize, inner: usize) -> (Vec<T>, LnCache<T>) {
        let len = self.len();
        assert_eq!(x.len(), outer * len * inner, "layer_norm: buffer does not match view");
        let inv_len = T::one() / T::of(len as f64);
        let eps = T::of(self.eps);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); outer * inner];
        let mut y = vec![T::zero(); x.len()];
        let mut mean = vec![T::zero(); inner];
        let mut var = vec![T::zero(); inner];
        for o in 0..outer {
            let block = &x[o * len * inner..(o + 1) * len * inner];
            mean.fill(T::zero());
            var.fill(T::zero());
            for l in 0..len {
                for (m, &v) in mean.iter_mut().zip(&block[l * inner..(l + 1) * inner]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_len);
            for l in 0..len {
                for ((s, &v), &m) in var.iter_mut().zip(&block[l * inner..(l + 1) * inner]).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            let istd = &mut inv_std[o * inner..(o + 1) * inner];
            for (is, &s) in istd.iter_mut().zip(&var) {
                *is = T::one() / (s * inv_len + eps).sqrt();
            }
            for l in 0..len {
                let (g, b) = (self.gamma.data()[l], self.beta.data()[l]);
                let r = o * len * inner + l * inner..o * len * inner + (l + 1) * inner;
                for i in 0..inner {
                    let xh = (block[l * inner + i] - mean[i]) * istd[i];
                    xhat[r.start + i] = xh;
                    y[r.start + i] = xh * g + b;
                }
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward_axis(
        &self,
        cache: &LnCache<T>,
        dy: &[T],
        outer: usize,
        inner: usize,
        grads: Option<&mut LayerNorm<T>>,
    ) -> Vec<T> {
        let len = self.len();
        assert_eq!(dy.len(), outer * len * inner);
        let inv_len = T::one() / T::of(len as f64);
        if let Some(g) = grads {
            let dg = g.gamma.data_mut();
            for o in 0..outer {
                for l in 0..len {
                    let off = o * len * inner + l * inner;
                    let mut acc = T::zero();
                    for i in 0..inner {
                        acc += dy[off + i] * cache.xhat[off + i];
                    }
                    dg[l] += acc;
                }
            }
            let dbeta = g.beta.data_mut();
            for o in 0..outer {
                for l in 0..len {
                    let off = o * len * inner + l * inner;
                    dbeta[l] += dy[off..off + inner].iter().copied().sum::<T>();
                }
            }
        }
        let mut dx = vec![T::zero(); dy.len()];
        let mut mean_d = vec![T::zero(); inner];
        let mut mean_dx = vec![T::zero(); inner];
        for o in 0..outer {
            mean_d.fill(T::zero());
            mean_dx.fill(T::zero());
            for l in 0..len {
                let g = self.gamma.data()[l];
                let off = o * len * inner + l * inner;
                for i in 0..inner {
                    let d = dy[off + i] * g;
                    mean_d[i] += d;
                    mean_dx[i] += d * cache.xhat[off + i];
                }
            }
            mean_d.iter_mut().for_each(|v| *v *= inv_len);
            mean_dx.iter_mut().for_each(|v| *v *= inv_len);
            let istd = &cache.inv_std[o * inner..(o + 1) * inner];
            for l in 0..len {
                let g = self.gamma.data()[l];
                let off = o * len * inner + l * inner;
                for i in 0..inner {
                    let d = dy[off + i] * g;
                    dx[off + i] = istd[i] * (d - mean_d[i] - cache.xhat[off + i] * mean_dx[i]);
                }
            }
        }
        dx
    }

    /// Normalizes a rank-4 activation over its channel axis.
    pub fn forward_channels(&self, x: &Tensor<T>) -> (Tensor<T>, LnCache<T>) {
        let [n, c, h, w] = x.dims4();
        assert_eq!(c, self.len(), "layer_norm: channel count mismatch");
        let (y, cache) = self.forward_axis(x.data(), n, h * w);
        (Tensor::from_vec(x.shape(), y).unwrap(), cache)
    }

    pub fn backward_channels(
        &self,
        cache: &LnCache<T>,
        dy: &Tensor<T>,
        grads: Option<&mut LayerNorm<T>>,
    ) -> Tensor<T> {
        let [n, _, h, w] = dy.dims4();
        let dx = self.backward_axis(cache, dy.data(), n, h * w, grads);
        Tensor::from_vec(dy.shape(), dx).unwrap()
    }
}

impl<T: Scalar> Parameters<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Functional form over the channel axis of a rank-4 tensor.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], eps: f64) -> Tensor<T> {
    let ln = LayerNorm {
        gamma: Tensor::from_vec(&[gamma.len()], gamma.to_vec()).unwrap(),
        beta: Tensor::from_vec(&[beta.len()], beta.to_vec()).unwrap(),
        eps,
    };
    ln.forward_channels(x).0
}
