//! Whole-volume inference by sliding an `S_in`-slice window along the axial
//! axis.

use serde::Serialize;

use super::net::I3Net;
use crate::error::{validation_err, Error, Result};
use crate::tensor::Tensor;
use crate::volformat::{IntensityDomain, Volume};

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub volume: Volume,
    pub report: SynthReport,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SynthReport {
    pub windows: usize,
    /// Trailing slices replicated because the input had fewer than `S_in`.
    pub padded_slices: usize,
    /// In-plane edge padding `(top, bottom, left, right)`, removed afterward.
    pub padded_plane: [usize; 4],
}

/// Window start indices: stride `S_in - 1`, the last one aligned to the end.
pub fn window_starts(s: usize, s_in: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + s_in < s {
        out.push(start);
        start += s_in - 1;
    }
    out.push(start.min(s - s_in));
    out
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Upsamples `lr` from `S` to `(S - 1)·R + 1` slices.
///
/// Output slices covered by several windows are averaged; anchor slices
/// `k·R` are copied from the input and all values are clamped to `[0, 1]`.
pub fn synthesize_volume(lr: &Volume, net: &I3Net<f32>) -> Result<Synthesis> {
    if lr.domain() != IntensityDomain::NormalizedUnit {
        return Err(validation_err!("synthesize_volume expects a normalized volume"));
    }
    let cfg = net.config();
    let (r, s_in) = (cfg.scale, cfg.s_in);
    let [s, h, w] = lr.dims();
    let s_eff = s.max(s_in);
    let m = cfg.spatial_multiple();
    let (hp, wp) = (round_up(h, m), round_up(w, m));
    let (top, left) = ((hp - h) / 2, (wp - w) / 2);
    let mut report = SynthReport {
        windows: 0,
        padded_slices: s_eff - s,
        padded_plane: [top, hp - h - top, left, wp - w - left],
    };

    // Edge-replicated padded plane of LR slice `k`.
    let padded = |k: usize| -> Vec<f32> {
        let src = lr.slice(k.min(s - 1));
        let mut out = Vec::with_capacity(hp * wp);
        for y in 0..hp {
            let sy = (y as isize - top as isize).clamp(0, h as isize - 1) as usize;
            let row = &src[sy * w..(sy + 1) * w];
            for x in 0..wp {
                out.push(row[(x as isize - left as isize).clamp(0, w as isize - 1) as usize]);
            }
        }
        out
    };

    let plane = hp * wp;
    let out_eff = (s_eff - 1) * r + 1;
    let mut sum = vec![0.0f32; out_eff * plane];
    let mut count = vec![0u32; out_eff];
    for start in window_starts(s_eff, s_in) {
        let mut x = Vec::with_capacity(s_in * plane);
        for k in start..start + s_in {
            x.extend(padded(k));
        }
        let y = net.infer(&Tensor::from_vec(&[1, s_in, hp, wp], x)?)?;
        if !y.all_finite() {
            return Err(Error::Numerical(format!("non-finite network output in window starting at slice {start}")));
        }
        for (j, chunk) in y.data().chunks_exact(plane).enumerate() {
            let o = start * r + j;
            for (acc, &v) in sum[o * plane..(o + 1) * plane].iter_mut().zip(chunk) {
                *acc += v;
            }
            count[o] += 1;
        }
        report.windows += 1;
    }

    let out_s = (s - 1) * r + 1;
    let mut data = Vec::with_capacity(out_s * h * w);
    for o in 0..out_s {
        if o % r == 0 {
            data.extend_from_slice(lr.slice(o / r));
            continue;
        }
        let inv = 1.0 / count[o] as f32;
        let sl = &sum[o * plane..(o + 1) * plane];
        for y in top..top + h {
            let row = &sl[y * wp + left..y * wp + left + w];
            data.extend(row.iter().map(|&v| if count[o] == 1 { v } else { v * inv }.clamp(0.0, 1.0)));
        }
    }
    let [ds, dh, dw] = lr.spacing();
    let volume = Volume::new([out_s, h, w], data, [ds / r as f64, dh, dw], IntensityDomain::NormalizedUnit)?;
    Ok(Synthesis { volume, report })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::interp::lerp_channels;
    use crate::model::ModelConfig;
    use crate::nnops::Conv2d;

    fn net(r: usize, p: usize) -> I3Net<f32> {
        let cfg = ModelConfig { channels: 8, n_blocks: 1, cvb_positions: vec![1], window: p, scale: r, ..Default::default() };
        I3Net::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn volume(s: usize, h: usize, w: usize) -> Volume {
        let data = (0..s * h * w).map(|i| ((i * 7919) % 997) as f32 / 997.0).collect();
        Volume::new([s, h, w], data, [2.0, 1.0, 1.0], IntensityDomain::NormalizedUnit).unwrap()
    }

    #[test]
    fn starts() {
        assert_eq!(window_starts(4, 4), vec![0]);
        assert_eq!(window_starts(7, 4), vec![0, 3]);
        assert_eq!(window_starts(8, 4), vec![0, 3, 4]);
        assert_eq!(window_starts(10, 4), vec![0, 3, 6]);
    }

    #[test]
    fn identity_at_init_equals_linear_interpolation() {
        for (s, h, w) in [(4, 16, 16), (7, 16, 16), (8, 12, 20), (2, 16, 8)] {
            let lr = volume(s, h, w);
            let out = synthesize_volume(&lr, &net(2, 8)).unwrap();
            assert_eq!(out.volume.dims(), [(s - 1) * 2 + 1, h, w]);
            let lin = lerp_channels(&Tensor::from_vec(&[1, s, h, w], lr.data().to_vec()).unwrap(), 2);
            let diff = out.volume.data().iter().zip(lin.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(diff <= 1e-6, "{s}x{h}x{w}: {diff}");
            assert_eq!(out.report.padded_slices, 4usize.saturating_sub(s));
        }
    }

    #[test]
    fn anchors_pass_through_bitwise() {
        let mut n = net(3, 8);
        n.tail = Conv2d::init(8, 10, 3, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let lr = volume(7, 16, 16);
        let out = synthesize_volume(&lr, &n).unwrap();
        assert_eq!(out.report.windows, 2);
        for k in 0..7 {
            let a: Vec<u32> = out.volume.slice(3 * k).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = lr.slice(k).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert!(out.volume.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.volume.spacing()[0], 2.0 / 3.0);
    }

    #[test]
    fn raw_volume_rejected() {
        let v = Volume::new([4, 8, 8], vec![0.0; 256], [1.0; 3], IntensityDomain::RawHu).unwrap();
        assert!(synthesize_volume(&v, &net(2, 8)).is_err());
    }
}
