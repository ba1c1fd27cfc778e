use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Redundancy {
    /// Mean `|r_ij|` over off-diagonal pairs of non-constant channels;
    /// `None` when fewer than two such channels exist.
    pub value: Option<f64>,
    /// Channels with zero variance, left out of the matrix.
    pub excluded_channels: Vec<usize>,
}

/// Mean absolute off-diagonal Pearson correlation between channel maps of
/// `[N, C, H, W]`, each flattened over batch and space.
pub fn feature_redundancy(feature: &Tensor<f32>) -> Result<Redundancy> {
    let [n, c, h, w] = feature.dims4();
    if c < 2 {
        return Err(validation_err!("redundancy needs at least 2 channels, got {c}"));
    }
    let hw = h * w;
    let len = (n * hw) as f64;
    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(c);
    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for ch in 0..c {
        let vals: Vec<f64> = (0..n).flat_map(|b| feature.plane(b, ch).iter().map(|&v| v as f64)).collect();
        let mean = vals.iter().sum::<f64>() / len;
        let dev: Vec<f64> = vals.iter().map(|v| v - mean).collect();
        let ss: f64 = dev.iter().map(|d| d * d).sum();
        if ss == 0.0 {
            excluded.push(ch);
            continue;
        }
        let inv = 1.0 / ss.sqrt();
        centered.push(dev.into_iter().map(|d| d * inv).collect());
        kept.push(ch);
    }
    let k = centered.len();
    if k < 2 {
        return Ok(Redundancy { value: None, excluded_channels: excluded });
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let r: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            sum += r.abs().min(1.0);
        }
    }
    Ok(Redundancy { value: Some(sum / (k * (k - 1) / 2) as f64), excluded_channels: excluded })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn normal(rng: &mut ChaCha8Rng) -> f32 {
        let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    }

    #[test]
    fn identical_and_negated_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base: Vec<f32> = (0..64).map(|_| normal(&mut rng)).collect();
        let same = Tensor::from_fn(&[1, 3, 8, 8], |i| base[i % 64]);
        assert!((feature_redundancy(&same).unwrap().value.unwrap() - 1.0).abs() < 1e-12);
        let neg = Tensor::from_fn(&[1, 2, 8, 8], |i| if i < 64 { base[i] } else { -base[i - 64] });
        assert!((feature_redundancy(&neg).unwrap().value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_channels_are_nearly_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[1, 8, 64, 64], |_| normal(&mut rng));
        // |r| for n = 4096 has standard deviation ~ 1/64.
        assert!(feature_redundancy(&x).unwrap().value.unwrap() < 0.1);
    }

    #[test]
    fn invariant_to_positive_affine_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(&[2, 4, 8, 8], |_| normal(&mut rng));
        let (a, b) = ([0.5f32, 3.0, 1.0, 7.0], [1.0f32, -2.0, 0.0, 0.25]);
        let mut y = x.clone();
        for n in 0..2 {
            for c in 0..4 {
                y.plane_mut(n, c).iter_mut().for_each(|v| *v = a[c] * *v + b[c]);
            }
        }
        let (rx, ry) = (feature_redundancy(&x).unwrap().value.unwrap(), feature_redundancy(&y).unwrap().value.unwrap());
        assert!((rx - ry).abs() < 1e-5);
    }

    #[test]
    fn constant_channels_are_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[1, 3, 4, 4], |i| if i < 16 { 1.0 } else { normal(&mut rng) });
        let r = feature_redundancy(&x).unwrap();
        assert_eq!(r.excluded_channels, vec![0]);
        assert!(r.value.is_some());
        let z = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        assert_eq!(feature_redundancy(&z).unwrap().value, None);
        assert!(feature_redundancy(&Tensor::<f32>::zeros(&[1, 1, 4, 4])).is_err());
    }
}
