//! Stride-1 "same" 2D convolution via im2col + GEMM.
//!
//! Kernels may be rectangular (`3×3`, `3×1`, `1×3`, `1×1`); extents must be
//! odd so zero padding of `k/2` preserves the spatial size.

use rand::Rng;

use super::{join, Module, Parameters};
use crate::error::{shape_err, Result};
use crate::tensor::{debug_assert_finite, gemm, Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    /// `[C_out, C_in, kh, kw]`.
    pub weight: Tensor<T>,
    /// `[C_out]`.
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(c_in: usize, c_out: usize, kh: usize, kw: usize) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernel extents must be odd");
        Conv2d { weight: Tensor::zeros(&[c_out, c_in, kh, kw]), bias: Tensor::zeros(&[c_out]) }
    }

    /// Kaiming-uniform with the fan-in bound `1/sqrt(fan_in)` on weights and
    /// bias.
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, kh: usize, kw: usize, rng: &mut R) -> Self {
        let mut conv = Self::zeros(c_in, c_out, kh, kw);
        let bound = 1.0 / ((c_in * kh * kw) as f64).sqrt();
        for v in conv.weight.data_mut().iter_mut().chain(conv.bias.data_mut()) {
            *v = T::of(rng.random_range(-bound..bound));
        }
        conv
    }

    /// `1×1` convolution whose weight is the identity matrix.
    pub fn identity(c: usize) -> Self {
        let mut conv = Self::zeros(c, c, 1, 1);
        for i in 0..c {
            conv.weight.data_mut()[i * c + i] = T::one();
        }
        conv
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == (1, 1)
    }

    /// Unrolls `[C_in, H, W]` into `[C_in·kh·kw, H·W]`.
    fn im2col(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let (kh, kw) = self.kernel();
        let (ph, pw) = (kh / 2, kw / 2);
        let hw = h * w;
        for c in 0..self.c_in() {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &mut cols[((c * kh + ky) * kw + kx) * hw..][..hw];
                    for y in 0..h {
                        let dst = &mut row[y * w..(y + 1) * w];
                        let sy = y as isize + ky as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let shift = kx as isize - pw as isize;
                        copy_shifted(src, dst, shift);
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, summing.
    fn col2im(&self, cols: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (kh, kw) = self.kernel();
        let (ph, pw) = (kh / 2, kw / 2);
        let hw = h * w;
        for c in 0..self.c_in() {
            let plane = &mut dx[c * hw..(c + 1) * hw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &cols[((c * kh + ky) * kw + kx) * hw..][..hw];
                    let shift = kx as isize - pw as isize;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        add_shifted_back(&row[y * w..(y + 1) * w], dst, shift);
                    }
                }
            }
        }
    }
}

/// `dst[x] = src[x + shift]`, zero outside.
#[inline]
fn copy_shifted<T: Scalar>(src: &[T], dst: &mut [T], shift: isize) {
    let w = src.len() as isize;
    for (x, d) in dst.iter_mut().enumerate() {
        let sx = x as isize + shift;
        *d = if sx >= 0 && sx < w { src[sx as usize] } else { T::zero() };
    }
}

/// `dst[x + shift] += row[x]` where in range.
#[inline]
fn add_shifted_back<T: Scalar>(row: &[T], dst: &mut [T], shift: isize) {
    let w = row.len() as isize;
    for (x, &g) in row.iter().enumerate() {
        let sx = x as isize + shift;
        if sx >= 0 && sx < w {
            dst[sx as usize] += g;
        }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    /// The input, kept for the weight gradient.
    type Cache = Tensor<T>;

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let [n, c, h, w] = x.dims4();
        if c != self.c_in() {
            return Err(shape_err!("conv expects {} input channels, got {c}", self.c_in()));
        }
        let (kh, kw) = self.kernel();
        let (co, k, hw) = (self.c_out(), c * kh * kw, h * w);
        let mut y = Tensor::zeros(&[n, co, h, w]);
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); k * hw] };
        for b in 0..n {
            let xb = &x.data()[b * c * hw..(b + 1) * c * hw];
            let yb = &mut y.data_mut()[b * co * hw..(b + 1) * co * hw];
            for (o, row) in yb.chunks_exact_mut(hw).enumerate() {
                row.fill(self.bias.data()[o]);
            }
            let src = if self.is_pointwise() {
                xb
            } else {
                self.im2col(xb, h, w, &mut cols);
                &cols
            };
            gemm(false, false, co, hw, k, T::one(), self.weight.data(), src, T::one(), yb);
        }
        debug_assert_finite!(y, "conv2d", x, self.weight, self.bias);
        Ok((y, x.clone()))
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T> {
        let [n, c, h, w] = x.dims4();
        let (kh, kw) = self.kernel();
        let (co, k, hw) = (self.c_out(), c * kh * kw, h * w);
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); k * hw] };
        let mut dcols = vec![T::zero(); k * hw];
        let mut grads = grads;
        for b in 0..n {
            let xb = &x.data()[b * c * hw..(b + 1) * c * hw];
            let dyb = &dy.data()[b * co * hw..(b + 1) * co * hw];
            if let Some(g) = grads.as_deref_mut() {
                let src = if self.is_pointwise() {
                    xb
                } else {
                    self.im2col(xb, h, w, &mut cols);
                    &cols
                };
                gemm(false, true, co, k, hw, T::one(), dyb, src, T::one(), g.weight.data_mut());
                for (o, row) in dyb.chunks_exact(hw).enumerate() {
                    g.bias.data_mut()[o] += row.iter().copied().sum::<T>();
                }
            }
            let dxb = &mut dx.data_mut()[b * c * hw..(b + 1) * c * hw];
            if self.is_pointwise() {
                gemm(true, false, k, hw, co, T::one(), self.weight.data(), dyb, T::zero(), dxb);
            } else {
                gemm(true, false, k, hw, co, T::one(), self.weight.data(), dyb, T::zero(), &mut dcols);
                self.col2im(&dcols, h, w, dxb);
            }
        }
        dx
    }
}

impl<T: Scalar> Parameters<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nnops::gradcheck::{check_module_input, check_module_params};

    /// Direct 7-loop convolution.
    fn conv_naive(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let [n, c, h, w] = x.dims4();
        let [co, _, kh, kw] = conv.weight.dims4();
        let mut y = Tensor::zeros(&[n, co, h, w]);
        for b in 0..n {
            for o in 0..co {
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = conv.bias.data()[o];
                        for i in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let sy = yy as isize + ky as isize - (kh / 2) as isize;
                                    let sx = xx as isize + kx as isize - (kw / 2) as isize;
                                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                        acc += conv.weight.data()[((o * c + i) * kh + ky) * kw + kx]
                                            * x.data()[((b * c + i) * h + sy as usize) * w + sx as usize];
                                    }
                                }
                            }
                        }
                        y.data_mut()[((b * co + o) * h + yy) * w + xx] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_naive_for_all_kernel_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (kh, kw) in [(3, 3), (3, 1), (1, 3), (1, 1)] {
            let conv = Conv2d::<f64>::init(3, 5, kh, kw, &mut rng);
            let x = Tensor::from_fn(&[2, 3, 5, 6], |i| ((i * 7) % 13) as f64 - 6.0);
            let (y, _) = conv.forward(&x).unwrap();
            assert!(y.max_abs_diff(&conv_naive(&conv, &x)) < 1e-12, "{kh}x{kw}");
        }
    }

    #[test]
    fn zero_input_zero_bias_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::init(4, 8, 3, 3, &mut rng);
        conv.bias.fill(0.0);
        let (y, _) = conv.forward(&Tensor::zeros(&[1, 4, 8, 8])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (seed, (kh, kw)) in [(3, 3), (3, 1), (1, 3), (1, 1), (3, 3)].into_iter().enumerate() {
            let conv = Conv2d::<f64>::init(2, 3, kh, kw, &mut rng);
            let rep = check_module_input(&conv, &[2, 2, 5, 4], seed as u64, 1e-3);
            assert!(rep.passed, "{kh}x{kw} input {rep:?}");
            let rep = check_module_params(&conv, &[2, 2, 5, 4], seed as u64, 1e-3, usize::MAX);
            assert!(rep.passed, "{kh}x{kw} params {rep:?}");
        }
    }
}
