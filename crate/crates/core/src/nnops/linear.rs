use rand::Rng;

use super::{join, Parameters};
use crate::tensor::{gemm, Scalar, Tensor};

/// Fully connected layer, `y = W x + b` with `W: [out, in]`.
///
/// Two layouts are supported: `rows` treats the input as `[rows, in]` and
/// mixes along the last axis; `cols` treats it as `groups` matrices
/// `[in, cols]` and mixes along the leading axis of each.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear { weight: Tensor::zeros(&[d_out, d_in]), bias: Tensor::zeros(&[d_out]) }
    }

    /// Kaiming-uniform fan-in bound `1/sqrt(d_in)`.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(d_in, d_out);
        let bound = 1.0 / (d_in as f64).sqrt();
        for v in l.weight.data_mut().iter_mut().chain(l.bias.data_mut()) {
            *v = T::of(rng.random_range(-bound..bound));
        }
        l
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward_rows(&self, x: &[T], rows: usize) -> Vec<T> {
        let (di, d_o) = (self.d_in(), self.d_out());
        assert_eq!(x.len(), rows * di);
        let mut y = Vec::with_capacity(rows * d_o);
        for _ in 0..rows {
            y.extend_from_slice(self.bias.data());
        }
        gemm(false, true, rows, d_o, di, T::one(), x, self.weight.data(), T::one(), &mut y);
        y
    }

    pub fn backward_rows(&self, x: &[T], dy: &[T], rows: usize, grads: Option<&mut Self>) -> Vec<T> {
        let (di, d_o) = (self.d_in(), self.d_out());
        if let Some(g) = grads {
            gemm(true, false, d_o, di, rows, T::one(), dy, x, T::one(), g.weight.data_mut());
            let db = g.bias.data_mut();
            for row in dy.chunks_exact(d_o) {
                for (b, &v) in db.iter_mut().zip(row) {
                    *b += v;
                }
            }
        }
        let mut dx = vec![T::zero(); rows * di];
        gemm(false, false, rows, di, d_o, T::one(), dy, self.weight.data(), T::zero(), &mut dx);
        dx
    }

    pub fn forward_cols(&self, x: &[T], groups: usize, cols: usize) -> Vec<T> {
        let (di, d_o) = (self.d_in(), self.d_out());
        assert_eq!(x.len(), groups * di * cols);
        let mut y = vec![T::zero(); groups * d_o * cols];
        for g in 0..groups {
            let yg = &mut y[g * d_o * cols..(g + 1) * d_o * cols];
            for (o, row) in yg.chunks_exact_mut(cols).enumerate() {
                row.fill(self.bias.data()[o]);
            }
            let xg = &x[g * di * cols..(g + 1) * di * cols];
            gemm(false, false, d_o, cols, di, T::one(), self.weight.data(), xg, T::one(), yg);
        }
        y
    }

    pub fn backward_cols(
        &self,
        x: &[T],
        dy: &[T],
        groups: usize,
        cols: usize,
        grads: Option<&mut Self>,
    ) -> Vec<T> {
        let (di, d_o) = (self.d_in(), self.d_out());
        let mut dx = vec![T::zero(); groups * di * cols];
        let mut grads = grads;
        for g in 0..groups {
            let xg = &x[g * di * cols..(g + 1) * di * cols];
            let dyg = &dy[g * d_o * cols..(g + 1) * d_o * cols];
            if let Some(gr) = grads.as_deref_mut() {
                gemm(false, true, d_o, di, cols, T::one(), dyg, xg, T::one(), gr.weight.data_mut());
                for (o, row) in dyg.chunks_exact(cols).enumerate() {
                    gr.bias.data_mut()[o] += row.iter().copied().sum::<T>();
                }
            }
            let dxg = &mut dx[g * di * cols..(g + 1) * di * cols];
            gemm(true, false, di, cols, d_o, T::one(), self.weight.data(), dyg, T::zero(), dxg);
        }
        dx
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
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
    use crate::nnops::grad_check;

    #[test]
    fn rows_and_cols_agree_with_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = Linear::<f64>::init(3, 4, &mut rng);
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let y = l.forward_rows(&x, 2);
        for r in 0..2 {
            for o in 0..4 {
                let want = l.bias.data()[o]
                    + (0..3).map(|i| l.weight.data()[o * 3 + i] * x[r * 3 + i]).sum::<f64>();
                assert!((y[r * 4 + o] - want).abs() < 1e-12);
            }
        }
        // x as one group of [in=3, cols=2]
        let y = l.forward_cols(&x, 1, 2);
        for o in 0..4 {
            for c in 0..2 {
                let want = l.bias.data()[o]
                    + (0..3).map(|i| l.weight.data()[o * 3 + i] * x[i * 2 + c]).sum::<f64>();
                assert!((y[o * 2 + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Linear::<f64>::init(4, 3, &mut rng);
        let x = Tensor::from_fn(&[1, 1, 2, 4], |i| (i as f64 * 1.3).cos());
        let r: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let rep = grad_check(
            |x| {
                let y = l.forward_rows(x.data(), 2);
                let v = y.iter().zip(&r).map(|(a, b)| a * b).sum();
                (v, Tensor::from_vec(x.shape(), l.backward_rows(x.data(), &r, 2, None)).unwrap())
            },
            &x,
            1e-3,
        );
        assert!(rep.passed);
        let rep = grad_check(
            |x| {
                let y = l.forward_cols(x.data(), 1, 2);
                let v = y.iter().zip(&r).map(|(a, b)| a * b).sum();
                (v, Tensor::from_vec(x.shape(), l.backward_cols(x.data(), &r, 1, 2, None)).unwrap())
            },
            &x,
            1e-3,
        );
        assert!(rep.passed);
    }
}
