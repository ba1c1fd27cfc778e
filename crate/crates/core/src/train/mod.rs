//! L1 training with Adam and a single-cycle cosine schedule.

mod adam;
mod config;
mod trainer;

pub use adam::Adam;
pub use config::TrainConfig;
pub use trainer::{train_loop, RngState, StepRecord, TrainOutcome, TrainState, Trainer, ValRecord};

use crate::error::{validation_err, Result};
use crate::tensor::Tensor;

/// Mean absolute error, accumulated in `f64`.
pub fn l1_loss(pred: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(validation_err!("l1_loss shapes differ: {:?} vs {:?}", pred.shape(), target.shape()));
    }
    if pred.is_empty() {
        return Err(validation_err!("l1_loss of an empty tensor"));
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`l1_loss`] with respect to `pred`; zero at ties.
pub fn l1_loss_grad(pred: &Tensor<f32>, target: &Tensor<f32>) -> Tensor<f32> {
    let inv = 1.0 / pred.len() as f32;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            if a > b {
                inv
            } else if a < b {
                -inv
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("same shape as pred")
}

/// `lr0 · ½ · (1 + cos(π · step / total))`, clamped at the final value.
pub fn lr_at(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nnops::grad_check;

    #[test]
    fn l1_reference_values() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f32 * 0.1);
        assert_eq!(l1_loss(&t, &t).unwrap(), 0.0);
        let p = t.map(|v| v + 0.5);
        assert!((l1_loss(&p, &t).unwrap() - 0.5).abs() < 1e-7);
        assert!(l1_loss(&t, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn l1_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let a = Tensor::from_fn(&[3, 5, 7], |_| rng.random::<f32>());
            let b = Tensor::from_fn(&[3, 5, 7], |_| rng.random::<f32>());
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for i in 0..a.len() {
                sum += (a.data()[i] as f64 - b.data()[i] as f64).abs();
                count += 1;
            }
            assert!((l1_loss(&a, &b).unwrap() - sum / count as f64).abs() < 1e-7);
        }
    }

    #[test]
    fn l1_gradient_away_from_kinks() {
        let t = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 * 0.3);
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 * 0.3 + if i % 2 == 0 { 0.2 } else { -0.1 });
        let rep = grad_check(
            |x| {
                let n = x.len() as f64;
                let v = x.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
                let g = Tensor::from_fn(x.shape(), |i| (x.data()[i] - t.data()[i]).signum() / n);
                (v, g)
            },
            &x,
            1e-3,
        );
        assert!(rep.passed, "{rep:?}");
        let p = x.cast::<f32>();
        let g = l1_loss_grad(&p, &t.cast());
        assert!(g.data().iter().all(|v| v.abs() == 1.0 / 9.0));
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(lr_at(0, 100, 3e-4), 3e-4);
        assert!(lr_at(100, 100, 3e-4).abs() < 1e-20);
        assert!((lr_at(50, 100, 3e-4) - 1.5e-4).abs() < 1e-15);
        assert_eq!(lr_at(150, 100, 3e-4), lr_at(100, 100, 3e-4));
        let mut prev = f64::INFINITY;
        for s in 0..=1000 {
            let v = lr_at(s, 1000, 1.0);
            assert!(v <= prev);
            assert!(prev == f64::INFINITY || prev - v < 0.002);
            prev = v;
        }
    }
}
