use serde::{Deserialize, Serialize};

use crate::nnops::Parameters;
use crate::tensor::Tensor;

/// Adam with bias correction, `p -= lr · m̂ / (sqrt(v̂) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed updates.
    pub t: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Adam {
    pub fn new<P: Parameters<f32>>(params: &P, beta1: f64, beta2: f64, eps: f64) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t| m.push(Tensor::zeros(t.shape())));
        let v = m.clone();
        Adam { beta1, beta2, eps, t: 0, m, v }
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper { beta1: self.beta1, beta2: self.beta2, eps: self.eps, t: self.t }
    }

    pub fn step<P: Parameters<f32>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step = (lr / bc1) as f32;
        let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;
        let eps = self.eps as f32;

        let mut g_all = Vec::with_capacity(self.m.len());
        grads.visit("", &mut |_, g| g_all.push(g.data().to_vec()));
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, p| {
            let (m, v, g) = (ms[i].data_mut(), vs[i].data_mut(), &g_all[i]);
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                p.data_mut()[j] -= step * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
            }
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnops::Linear;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Linear::<f32>::zeros(2, 1);
        let mut g = p.clone();
        g.weight.data_mut().copy_from_slice(&[0.3, -2.0]);
        g.bias.data_mut()[0] = 0.0;
        let mut opt = Adam::new(&p, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &g, 1e-2);
        assert!((p.weight.data()[0] + 1e-2).abs() < 1e-6);
        assert!((p.weight.data()[1] - 1e-2).abs() < 1e-6);
        assert_eq!(p.bias.data()[0], 0.0);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Linear::<f32>::zeros(3, 1);
        let target = [1.0f32, -2.0, 0.5];
        let mut opt = Adam::new(&p, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let mut g = p.clone();
            for (j, gv) in g.weight.data_mut().iter_mut().enumerate() {
                *gv = 2.0 * (p.weight.data()[j] - target[j]);
            }
            g.bias.fill(0.0);
            opt.step(&mut p, &g, 1e-2);
        }
        for j in 0..3 {
            assert!((p.weight.data()[j] - target[j]).abs() < 1e-2);
        }
    }
}
