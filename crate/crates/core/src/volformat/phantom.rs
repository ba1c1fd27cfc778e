//! Synthetic CT-like phantoms.
//!
//! A phantom is a smooth value-noise background with soft-edged ellipsoids
//! (organ, fat, air and bone analogs) and thin oblique tubes (vessel analogs)
//! composited on top. Generation uses only `+ - * /` and `sqrt` on `f64`
//! together with [`CounterRng`], so the output is bit-identical across
//! platforms for a given spec.

use serde::{Deserialize, Serialize};

use super::volume::{IntensityDomain, Volume};
use crate::error::{validation_err, Result};
use crate::rng::CounterRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub seed: u64,
    pub n_ellipsoids: usize,
    pub n_tubes: usize,
    /// `(S, H, W)`.
    pub size: [usize; 3],
    /// Lattice period of the background noise, in voxels. Infinity gives a
    /// constant background.
    pub background_smoothness: f64,
    pub spacing: [f64; 3],
    pub background_hu: (f64, f64),
    pub background_amplitude_hu: f64,
    pub organ_hu: (f64, f64),
    pub fat_hu: (f64, f64),
    pub air_hu: (f64, f64),
    pub bone_hu: (f64, f64),
    pub vessel_hu: (f64, f64),
    /// Standard deviation of additive per-voxel noise (acquisition noise
    /// analog); 0 disables it.
    pub noise_hu: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            n_ellipsoids: 10,
            n_tubes: 8,
            size: [19, 64, 64],
            background_smoothness: 16.0,
            spacing: [1.0, 1.0, 1.0],
            background_hu: (-40.0, 60.0),
            background_amplitude_hu: 40.0,
            organ_hu: (20.0, 180.0),
            fat_hu: (-130.0, -60.0),
            air_hu: (-1000.0, -750.0),
            bone_hu: (500.0, 1500.0),
            vessel_hu: (150.0, 450.0),
            noise_hu: 0.0,
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(seed: u64) -> Self {
        PhantomSpec { seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let [s, h, w] = self.size;
        if s == 0 || h == 0 || w == 0 {
            return Err(validation_err!("phantom size {:?} has a zero dimension", self.size));
        }
        if !(self.noise_hu >= 0.0 && self.noise_hu.is_finite()) {
            return Err(validation_err!("noise_hu must be finite and >= 0"));
        }
        if !(self.background_smoothness > 0.0) {
            return Err(validation_err!("background_smoothness must be > 0"));
        }
        for (name, (lo, hi)) in [
            ("background_hu", self.background_hu),
            ("organ_hu", self.organ_hu),
            ("fat_hu", self.fat_hu),
            ("air_hu", self.air_hu),
            ("bone_hu", self.bone_hu),
            ("vessel_hu", self.vessel_hu),
        ] {
            if !(lo <= hi) {
                return Err(validation_err!("{name} range ({lo}, {hi}) is inverted"));
            }
        }
        Ok(())
    }
}

struct Ellipsoid {
    center: [f64; 3],
    // Inverse squared semi-axes along s, and along the rotated in-plane axes.
    inv_rs2: f64,
    inv_ru2: f64,
    inv_rv2: f64,
    // In-plane rotation as a unit vector.
    cos: f64,
    sin: f64,
    min_radius: f64,
    value: f64,
}

struct Tube {
    origin: [f64; 3],
    dir: [f64; 3],
    radius: f64,
    value: f64,
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

#[inline]
fn soft_edge(signed_depth: f64) -> f64 {
    // Linear ramp one voxel wide around the surface.
    (signed_depth + 0.5).clamp(0.0, 1.0)
}

fn unit_vector(rng: &mut CounterRng, dims: usize) -> [f64; 3] {
    loop {
        let mut v = [0.0; 3];
        for c in v.iter_mut().take(dims) {
            *c = rng.range(-1.0, 1.0);
        }
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Trilinear value noise in `[-1, 1]` with period `cell` voxels.
fn value_noise(lattice: &CounterRng, cell: f64, s: f64, h: f64, w: f64) -> f64 {
    let (fs, fh, fw) = if cell.is_finite() { (s / cell, h / cell, w / cell) } else { (0.0, 0.0, 0.0) };
    let (is, ih, iw) = (fs.floor(), fh.floor(), fw.floor());
    let (ts, th, tw) = (smoothstep(fs - is), smoothstep(fh - ih), smoothstep(fw - iw));
    let node = |ds: i64, dh: i64, dw: i64| {
        let a = (is as i64 + ds) as u64;
        let b = (ih as i64 + dh) as u64;
        let c = (iw as i64 + dw) as u64;
        let idx = a.wrapping_mul(0x1_0000_0001) ^ b.wrapping_mul(0x10_0001) ^ c;
        2.0 * lattice.at(idx) - 1.0
    };
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(node(0, 0, 0), node(0, 0, 1), tw);
    let c01 = lerp(node(0, 1, 0), node(0, 1, 1), tw);
    let c10 = lerp(node(1, 0, 0), node(1, 0, 1), tw);
    let c11 = lerp(node(1, 1, 0), node(1, 1, 1), tw);
    lerp(lerp(c00, c01, th), lerp(c10, c11, th), ts)
}

/// Deterministically renders `spec` as a raw-HU volume.
pub fn gen_phantom(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let [ns, nh, nw] = spec.size;
    let root = CounterRng::new(spec.seed);
    let mut bg_rng = root.split(0);
    let lattice = root.split(1);
    let noise = root.split(3);
    let base = bg_rng.range(spec.background_hu.0, spec.background_hu.1);

    let extent = [ns as f64, nh as f64, nw as f64];
    let plane_min = extent[1].min(extent[2]);

    let ellipsoids: Vec<Ellipsoid> = (0..spec.n_ellipsoids)
        .map(|i| {
            let mut r = root.split(1000 + i as u64);
            let center = [
                r.range(0.0, extent[0]),
                r.range(0.15 * extent[1], 0.85 * extent[1]),
                r.range(0.15 * extent[2], 0.85 * extent[2]),
            ];
            let rs = r.range(0.2, 0.6) * extent[0].max(4.0);
            let ru = r.range(0.06, 0.22) * plane_min;
            let rv = r.range(0.06, 0.22) * plane_min;
            let rot = unit_vector(&mut r, 2);
            let class = r.uniform();
            let range = if class < 0.55 {
                spec.organ_hu
            } else if class < 0.75 {
                spec.fat_hu
            } else if class < 0.88 {
                spec.air_hu
            } else {
                spec.bone_hu
            };
            Ellipsoid {
                center,
                inv_rs2: 1.0 / (rs * rs),
                inv_ru2: 1.0 / (ru * ru),
                inv_rv2: 1.0 / (rv * rv),
                cos: rot[0],
                sin: rot[1],
                min_radius: ru.min(rv),
                value: r.range(range.0, range.1),
            }
        })
        .collect();

    let tubes: Vec<Tube> = (0..spec.n_tubes)
        .map(|i| {
            let mut r = root.split(2000 + i as u64);
            let origin = [
                r.range(0.0, extent[0]),
                r.range(0.1 * extent[1], 0.9 * extent[1]),
                r.range(0.1 * extent[2], 0.9 * extent[2]),
            ];
            let dir = unit_vector(&mut r, 3);
            Tube {
                origin,
                dir,
                radius: r.range(0.8, 2.0),
                value: r.range(spec.vessel_hu.0, spec.vessel_hu.1),
            }
        })
        .collect();

    let mut data = Vec::with_capacity(ns * nh * nw);
    for s in 0..ns {
        let ps = s as f64 + 0.5;
        for h in 0..nh {
            let ph = h as f64 + 0.5;
            for w in 0..nw {
                let pw = w as f64 + 0.5;
                let mut v = base
                    + spec.background_amplitude_hu
                        * value_noise(&lattice, spec.background_smoothness, ps, ph, pw);
                for e in &ellipsoids {
                    let (ds, dh, dw) = (ps - e.center[0], ph - e.center[1], pw - e.center[2]);
                    let u = e.cos * dh + e.sin * dw;
                    let t = -e.sin * dh + e.cos * dw;
                    let q = ds * ds * e.inv_rs2 + u * u * e.inv_ru2 + t * t * e.inv_rv2;
                    if q < 4.0 {
                        let alpha = soft_edge((1.0 - q.sqrt()) * e.min_radius);
                        v += alpha * (e.value - v);
                    }
                }
                for t in &tubes {
                    let d = [ps - t.origin[0], ph - t.origin[1], pw - t.origin[2]];
                    let along = d[0] * t.dir[0] + d[1] * t.dir[1] + d[2] * t.dir[2];
                    let perp = [
                        d[0] - along * t.dir[0],
                        d[1] - along * t.dir[1],
                        d[2] - along * t.dir[2],
                    ];
                    let dist2 = perp[0] * perp[0] + perp[1] * perp[1] + perp[2] * perp[2];
                    let reach = t.radius + 1.0;
                    if dist2 < reach * reach {
                        let alpha = soft_edge(t.radius - dist2.sqrt());
                        v += alpha * (t.value - v);
                    }
                }
                if spec.noise_hu > 0.0 {
                    // Irwin-Hall sum of four uniforms, scaled to unit variance.
                    let idx = ((s * nh + h) * nw + w) as u64 * 4;
                    let u: f64 = (0..4).map(|k| noise.at(idx + k)).sum();
                    v += spec.noise_hu * (u - 2.0) * 3f64.sqrt();
                }
                data.push(v as f32);
            }
        }
    }
    Volume::new(spec.size, data, spec.spacing, IntensityDomain::RawHu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = PhantomSpec { size: [7, 24, 24], ..PhantomSpec::with_seed(11) };
        let a = gen_phantom(&spec).unwrap();
        let b = gen_phantom(&spec).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = gen_phantom(&PhantomSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn degenerate_spec_is_constant() {
        let spec = PhantomSpec {
            n_ellipsoids: 0,
            n_tubes: 0,
            background_smoothness: f64::INFINITY,
            size: [4, 16, 16],
            ..PhantomSpec::with_seed(3)
        };
        let v = gen_phantom(&spec).unwrap();
        let first = v.data()[0];
        assert!(v.data().iter().all(|&x| x == first));
    }

    #[test]
    fn intensity_range_is_ct_like() {
        let v = gen_phantom(&PhantomSpec::with_seed(5)).unwrap();
        let (lo, hi) = v
            .data()
            .iter()
            .fold((f32::MAX, f32::MIN), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        assert!(lo >= -1100.0 && hi <= 1600.0, "range [{lo}, {hi}]");
        assert!(hi - lo > 200.0, "phantom has too little contrast");
    }

    #[test]
    fn additive_noise_has_requested_std() {
        let flat = PhantomSpec {
            n_ellipsoids: 0,
            n_tubes: 0,
            background_smoothness: f64::INFINITY,
            size: [8, 32, 32],
            ..PhantomSpec::with_seed(9)
        };
        let clean = gen_phantom(&flat).unwrap();
        let noisy = gen_phantom(&PhantomSpec { noise_hu: 10.0, ..flat.clone() }).unwrap();
        let again = gen_phantom(&PhantomSpec { noise_hu: 10.0, ..flat.clone() }).unwrap();
        assert_eq!(noisy.data(), again.data());
        let d: Vec<f64> =
            noisy.data().iter().zip(clean.data()).map(|(a, b)| (a - b) as f64).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        // 8192 samples: standard error of the mean ~0.11, of the std ~0.08.
        assert!(mean.abs() < 0.5, "mean {mean}");
        assert!((std - 10.0).abs() < 0.4, "std {std}");
        assert!(d.iter().all(|x| x.abs() <= 20.0 * 3f64.sqrt() + 1e-3));
        assert!(gen_phantom(&PhantomSpec { noise_hu: -1.0, ..flat.clone() }).is_err());
    }

    #[test]
    fn zero_size_rejected() {
        let spec = PhantomSpec { size: [0, 16, 16], ..Default::default() };
        assert!(gen_phantom(&spec).is_err());
    }
}
