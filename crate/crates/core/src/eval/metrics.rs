use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Result};
use crate::volformat::{IntensityDomain, Volume};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(pred: &Volume, gt: &Volume) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(validation_err!("volume shapes differ: {:?} vs {:?}", pred.dims(), gt.dims()));
    }
    if pred.domain() != IntensityDomain::NormalizedUnit || gt.domain() != IntensityDomain::NormalizedUnit {
        return Err(validation_err!("metrics need normalized volumes"));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` with data range 1; `+∞` for identical volumes.
pub fn psnr(pred: &Volume, gt: &Volume) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(psnr_from_mse(mse(pred.data(), gt.data())))
}

pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    sum / a.len() as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// Slices at fixed `s`: `[H, W]` planes.
    Axial,
    /// Fixed `h`: `[S, W]` planes.
    Coronal,
    /// Fixed `w`: `[S, H]` planes.
    Sagittal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Coronal, View::Sagittal];
}

/// Mean SSIM over a view, and whether any slice was reflect-padded up to
/// the window size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewSsim {
    pub value: f64,
    pub padded: bool,
}

/// Extracts slice `i` of `view` as a row-major plane.
pub fn view_slice(v: &Volume, view: View, i: usize) -> (Vec<f64>, usize, usize) {
    let [s, h, w] = v.dims();
    match view {
        View::Axial => (v.slice(i).iter().map(|&x| x as f64).collect(), h, w),
        View::Coronal => {
            let mut out = Vec::with_capacity(s * w);
            for si in 0..s {
                out.extend((0..w).map(|wi| v.at(si, i, wi) as f64));
            }
            (out, s, w)
        }
        View::Sagittal => {
            let mut out = Vec::with_capacity(s * h);
            for si in 0..s {
                out.extend((0..h).map(|hi| v.at(si, hi, i) as f64));
            }
            (out, s, h)
        }
    }
}

fn view_len(v: &Volume, view: View) -> usize {
    let [s, h, w] = v.dims();
    match view {
        View::Axial => s,
        View::Coronal => h,
        View::Sagittal => w,
    }
}

/// Per-slice 2D SSIM along one view, averaged over slices.
pub fn ssim_view(pred: &Volume, gt: &Volume, view: View) -> Result<ViewSsim> {
    check_pair(pred, gt)?;
    let n = view_len(gt, view);
    let (mut sum, mut padded) = (0.0, false);
    for i in 0..n {
        let (a, h, w) = view_slice(pred, view, i);
        let (b, _, _) = view_slice(gt, view, i);
        let (v, p) = ssim_2d(&a, &b, h, w);
        sum += v;
        padded |= p;
    }
    Ok(ViewSsim { value: sum / n as f64, padded })
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mirror index without repeating the edge sample, for any integer `i`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Reflect-pads `x` so both extents are at least `min`.
fn pad_to(x: &[f64], h: usize, w: usize, min: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (min.saturating_sub(h), min.saturating_sub(w));
    let (top, left) = (ph / 2, pw / 2);
    let (nh, nw) = (h + ph, w + pw);
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        let sy = reflect(y as isize - top as isize, h);
        for xx in 0..nw {
            out.push(x[sy * w + reflect(xx as isize - left as isize, w)]);
        }
    }
    (out, nh, nw)
}

/// Valid-region Gaussian filtering, separable.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xx in 0..ow {
            rows[y * ow + xx] = (0..k).map(|t| g[t] * x[y * w + xx + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            out[y * ow + xx] = (0..k).map(|t| g[t] * rows[(y + t) * ow + xx]).sum();
        }
    }
    (out, oh, ow)
}

/// Single-scale SSIM of two planes with data range 1; returns the mean of
/// the valid-region SSIM map and whether padding was needed.
pub fn ssim_2d(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, bool) {
    let padded = h < SSIM_WINDOW || w < SSIM_WINDOW;
    let (a, b, h, w) = if padded {
        let (pa, nh, nw) = pad_to(a, h, w, SSIM_WINDOW);
        let (pb, _, _) = pad_to(b, h, w, SSIM_WINDOW);
        (pa, pb, nh, nw)
    } else {
        (a.to_vec(), b.to_vec(), h, w)
    };
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let sq = |x: &[f64]| x.iter().map(|v| v * v).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let (mu_a, oh, ow) = filter_valid(&a, h, w, &g);
    let (mu_b, _, _) = filter_valid(&b, h, w, &g);
    let (e_aa, _, _) = filter_valid(&sq(&a), h, w, &g);
    let (e_bb, _, _) = filter_valid(&sq(&b), h, w, &g);
    let (e_ab, _, _) = filter_valid(&ab, h, w, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut sum = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let (va, vb, cov) = (e_aa[i] - ma * ma, e_bb[i] - mb * mb, e_ab[i] - ma * mb);
        let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        sum += num / den;
    }
    (sum / (oh * ow) as f64, padded)
}
