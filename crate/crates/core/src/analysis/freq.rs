use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Result};
use crate::nnops::dct2;
use crate::tensor::Tensor;

/// Split of an `N×M` DCT plane at ratio `rho`: `(i, j)` is high-frequency
/// when `i/N + j/M >= 2(1 - rho)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreqRegions {
    pub n: usize,
    pub m: usize,
    pub rho: f64,
}

impl FreqRegions {
    pub fn new(n: usize, m: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(validation_err!("rho must lie in (0, 1], got {rho}"));
        }
        Ok(FreqRegions { n, m, rho })
    }

    pub fn is_high(&self, i: usize, j: usize) -> bool {
        i as f64 / self.n as f64 + j as f64 / self.m as f64 >= 2.0 * (1.0 - self.rho)
    }

    pub fn high_count(&self) -> usize {
        (0..self.n).map(|i| (0..self.m).filter(|&j| self.is_high(i, j)).count()).sum()
    }

    /// `|H| / (N·M)`: the ratio for an all-ones intensity plane.
    pub fn uniform_ratio(&self) -> f64 {
        self.high_count() as f64 / (self.n * self.m) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HfRatio {
    pub ratio: f64,
    /// Planes with zero energy, left out of the average.
    pub zero_planes: usize,
    /// Every plane had zero energy; `ratio` is then defined as 0.
    pub all_zero: bool,
}

/// Squared DCT intensities of every `(n, c)` plane of `[N, C, H, W]`.
fn intensities(feature: &Tensor<f32>) -> Tensor<f64> {
    let f = dct2(&feature.cast::<f64>());
    f.map(|v| v * v)
}

fn ratio_from_energy(e: &Tensor<f64>, regions: &FreqRegions) -> HfRatio {
    let [n, c, h, w] = e.dims4();
    let (mut sum, mut used, mut zero) = (0.0, 0usize, 0usize);
    for b in 0..n {
        for ch in 0..c {
            let plane = e.plane(b, ch);
            let total: f64 = plane.iter().sum();
            if total == 0.0 {
                zero += 1;
                continue;
            }
            let mut high = 0.0;
            for i in 0..h {
                for j in 0..w {
                    if regions.is_high(i, j) {
                        high += plane[i * w + j];
                    }
                }
            }
            sum += high / total;
            used += 1;
        }
    }
    HfRatio { ratio: if used == 0 { 0.0 } else { sum / used as f64 }, zero_planes: zero, all_zero: used == 0 }
}

/// High-frequency share of DCT energy per plane, averaged over batch and
/// channels.
pub fn hf_energy_ratio(feature: &Tensor<f32>, rho: f64) -> Result<HfRatio> {
    let [_, _, h, w] = feature.dims4();
    let regions = FreqRegions::new(h, w, rho)?;
    Ok(ratio_from_energy(&intensities(feature), &regions))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCurve {
    /// `(rho, ratio)` of the feature.
    pub points: Vec<(f64, f64)>,
    /// `(rho, |H| / (N·M))`.
    pub uniform: Vec<(f64, f64)>,
    pub all_zero: bool,
}

impl EnergyCurve {
    pub fn is_monotone(&self) -> bool {
        let mono = |p: &[(f64, f64)]| p.windows(2).all(|w| w[0].0 > w[1].0 || w[1].1 >= w[0].1);
        mono(&self.points) && mono(&self.uniform)
    }

    /// Two-column `rho,ratio` table of the feature curve.
    pub fn to_csv(&self) -> String {
        curve_csv(&self.points)
    }

    pub fn uniform_csv(&self) -> String {
        curve_csv(&self.uniform)
    }
}

fn curve_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("rho,ratio\n");
    for (r, v) in points {
        s.push_str(&format!("{r},{v}\n"));
    }
    s
}

pub fn energy_curve(feature: &Tensor<f32>, rhos: &[f64]) -> Result<EnergyCurve> {
    let [_, _, h, w] = feature.dims4();
    let e = intensities(feature);
    let mut points = Vec::with_capacity(rhos.len());
    let mut uniform = Vec::with_capacity(rhos.len());
    let mut all_zero = false;
    for &rho in rhos {
        let regions = FreqRegions::new(h, w, rho)?;
        let r = ratio_from_energy(&e, &regions);
        all_zero |= r.all_zero;
        points.push((rho, r.ratio));
        uniform.push((rho, regions.uniform_ratio()));
    }
    Ok(EnergyCurve { points, uniform, all_zero })
}

/// Relative gap between total DCT energy and the spatial squared norm.
pub fn parseval_residual(feature: &Tensor<f32>) -> f64 {
    let spatial = feature.cast::<f64>().sq_norm();
    let freq: f64 = intensities(feature).sum();
    if spatial == 0.0 {
        freq
    } else {
        (freq - spatial).abs() / spatial
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn regions_partition_the_plane() {
        for rho in [0.1, 0.5, 0.9, 1.0] {
            let r = FreqRegions::new(8, 12, rho).unwrap();
            let high = r.high_count();
            let low = (0..8).map(|i| (0..12).filter(|&j| !r.is_high(i, j)).count()).sum::<usize>();
            assert_eq!(high + low, 96);
        }
        assert_eq!(FreqRegions::new(8, 8, 1.0).unwrap().high_count(), 64);
        assert_eq!(FreqRegions::new(8, 8, 1e-6).unwrap().high_count(), 0);
        assert!(FreqRegions::new(8, 8, 0.0).is_err());
        assert!(FreqRegions::new(8, 8, 1.5).is_err());
    }

    #[test]
    fn full_region_and_constant_feature() {
        let x = random(&[2, 3, 8, 8], 0);
        assert!((hf_energy_ratio(&x, 1.0).unwrap().ratio - 1.0).abs() < 1e-12);
        let c = Tensor::<f32>::full(&[1, 2, 8, 8], 0.7);
        assert!(hf_energy_ratio(&c, 0.5).unwrap().ratio < 1e-12);
        let z = Tensor::<f32>::zeros(&[1, 2, 8, 8]);
        let r = hf_energy_ratio(&z, 0.5).unwrap();
        assert!(r.all_zero && r.ratio == 0.0 && r.zero_planes == 2);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let x = random(&[2, 3, 8, 12], 1);
        let (n, m) = (8usize, 12usize);
        let pi = std::f64::consts::PI;
        let alpha = |k: usize, len: usize| if k == 0 { (1.0 / len as f64).sqrt() } else { (2.0 / len as f64).sqrt() };
        let mut acc = 0.0;
        for b in 0..2 {
            for c in 0..3 {
                let plane = x.plane(b, c);
                let (mut hi, mut tot) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..m {
                        let mut s = 0.0;
                        for y in 0..n {
                            for xx in 0..m {
                                s += plane[y * m + xx] as f64
                                    * ((pi * (2 * y + 1) as f64 * i as f64) / (2 * n) as f64).cos()
                                    * ((pi * (2 * xx + 1) as f64 * j as f64) / (2 * m) as f64).cos();
                            }
                        }
                        let e = (alpha(i, n) * alpha(j, m) * s).powi(2);
                        tot += e;
                        if i as f64 / n as f64 + j as f64 / m as f64 >= 1.0 {
                            hi += e;
                        }
                    }
                }
                acc += hi / tot;
            }
        }
        let want = acc / 6.0;
        let got = hf_energy_ratio(&x, 0.5).unwrap().ratio;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn curve_is_monotone_with_uniform_reference() {
        let x = random(&[1, 4, 16, 16], 2);
        let rhos: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
        let c = energy_curve(&x, &rhos).unwrap();
        assert!(c.is_monotone());
        assert!(c.points[0].1 < 0.01);
        assert!((c.points.last().unwrap().1 - 1.0).abs() < 1e-12);
        for &(rho, u) in &c.uniform {
            let r = FreqRegions::new(16, 16, rho).unwrap();
            assert_eq!(u, r.high_count() as f64 / 256.0);
        }
        assert!(c.to_csv().starts_with("rho,ratio\n0.05,"));
        assert_eq!(c.uniform_csv().lines().count(), 21);
    }

    #[test]
    fn parseval_holds() {
        let x = random(&[2, 3, 16, 8], 3);
        assert!(parseval_residual(&x) < 1e-10);
    }
}
