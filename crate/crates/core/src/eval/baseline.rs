use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Result};
use crate::model::interp::{lerp_plan, lerp_plane};
use crate::volformat::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpKind {
    Nearest,
    Linear,
    Cubic,
}

impl InterpKind {
    pub fn name(self) -> &'static str {
        match self {
            InterpKind::Nearest => "nearest",
            InterpKind::Linear => "linear",
            InterpKind::Cubic => "cubic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nearest" => Some(InterpKind::Nearest),
            "linear" => Some(InterpKind::Linear),
            "cubic" => Some(InterpKind::Cubic),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Baseline {
    pub volume: Volume,
    /// Cubic was requested on fewer than 4 slices and linear was used.
    pub fell_back_to_linear: bool,
}

/// Lagrange weights of nodes `n0..n0+4` at position `t`.
fn lagrange4(n0: usize, t: f64) -> [f64; 4] {
    let mut w = [1.0; 4];
    for (i, wi) in w.iter_mut().enumerate() {
        let xi = (n0 + i) as f64;
        for m in 0..4 {
            if m != i {
                let xm = (n0 + m) as f64;
                *wi *= (t - xm) / (xi - xm);
            }
        }
    }
    w
}

/// Axial-only upsampling to `(S - 1)·R + 1` slices; anchor slices `k·R` are
/// copied from the input. Nearest ties go to the lower slice; cubic uses the
/// 4-point Lagrange stencil around each gap (shifted inward at the ends) and
/// is clamped to `[0, 1]` for normalized inputs.
pub fn baseline_interp(lr: &Volume, r: usize, kind: InterpKind) -> Result<Baseline> {
    if r < 1 {
        return Err(validation_err!("scale factor must be >= 1, got {r}"));
    }
    let [s, h, w] = lr.dims();
    if s < 2 {
        return Err(validation_err!("baseline needs at least 2 slices"));
    }
    let fell_back = kind == InterpKind::Cubic && s < 4;
    let kind = if fell_back { InterpKind::Linear } else { kind };
    let plane = h * w;
    let plan = lerp_plan(s, r);
    let mut data = vec![0.0f32; plan.len() * plane];
    for (j, (dst, &(k, f))) in data.chunks_exact_mut(plane).zip(&plan).enumerate() {
        if f == 0.0 {
            dst.copy_from_slice(lr.slice(k));
            continue;
        }
        match kind {
            InterpKind::Nearest => {
                let rem = j % r;
                let src = if 2 * rem <= r { k } else { k + 1 };
                dst.copy_from_slice(lr.slice(src));
            }
            InterpKind::Linear => lerp_plane(lr.slice(k), Some(lr.slice(k + 1)), f, dst),
            InterpKind::Cubic => {
                let n0 = k.saturating_sub(1).min(s - 4);
                let wts = lagrange4(n0, j as f64 / r as f64);
                let srcs: Vec<&[f32]> = (0..4).map(|i| lr.slice(n0 + i)).collect();
                for (p, d) in dst.iter_mut().enumerate() {
                    let v: f64 = (0..4).map(|i| wts[i] * srcs[i][p] as f64).sum();
                    *d = v as f32;
                }
            }
        }
    }
    if lr.domain() == crate::volformat::IntensityDomain::NormalizedUnit {
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    let [ds, dh, dw] = lr.spacing();
    let volume = Volume::new([plan.len(), h, w], data, [ds / r as f64, dh, dw], lr.domain())?;
    Ok(Baseline { volume, fell_back_to_linear: fell_back })
}
