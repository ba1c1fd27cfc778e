use rand::Rng;

use super::volume::Volume;
use crate::error::{validation_err, Result};
use crate::tensor::Tensor;

/// Crops must tile into windows of this size.
pub const CROP_MULTIPLE: usize = 16;

/// Low-resolution input slab and its dense ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    /// `[S_in, h, w]`.
    pub lr: Tensor<f32>,
    /// `[(S_in - 1) * R + 1, h, w]`.
    pub hr: Tensor<f32>,
    pub scale: usize,
}

impl PatchPair {
    /// `lr[k] == hr[k * R]` bitwise for every k.
    pub fn is_decimation_consistent(&self) -> bool {
        let [s_in, h, w] = [self.lr.shape()[0], self.lr.shape()[1], self.lr.shape()[2]];
        let plane = h * w;
        (0..s_in).all(|k| {
            let a = &self.lr.data()[k * plane..(k + 1) * plane];
            let o = k * self.scale * plane;
            let b = &self.hr.data()[o..o + plane];
            a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

/// Draws a random slab of `(S_in - 1) * R + 1` dense slices and center-crops
/// it in-plane; the input slab is every R-th slice of it.
pub fn sample_patch<R: Rng + ?Sized>(
    hr: &Volume,
    scale: usize,
    s_in: usize,
    crop: usize,
    rng: &mut R,
) -> Result<PatchPair> {
    if scale < 1 || s_in < 2 {
        return Err(validation_err!("need R >= 1 and S_in >= 2, got R={scale}, S_in={s_in}"));
    }
    let [s, h, w] = hr.dims();
    let span = (s_in - 1) * scale + 1;
    if s < span {
        return Err(validation_err!("volume has {s} slices, patch needs {span}"));
    }
    if crop == 0 || crop % CROP_MULTIPLE != 0 {
        return Err(validation_err!(
            "crop {crop} must be a positive multiple of {CROP_MULTIPLE} (window partition)"
        ));
    }
    if crop > h.min(w) {
        return Err(validation_err!("crop {crop} exceeds in-plane size {h}x{w}"));
    }
    let start = rng.random_range(0..=s - span);
    let (top, left) = ((h - crop) / 2, (w - crop) / 2);

    let mut hr_data = Vec::with_capacity(span * crop * crop);
    for si in start..start + span {
        for hi in top..top + crop {
            let row = (si * h + hi) * w;
            hr_data.extend_from_slice(&hr.data()[row + left..row + left + crop]);
        }
    }
    let plane = crop * crop;
    let mut lr_data = Vec::with_capacity(s_in * plane);
    for k in 0..s_in {
        lr_data.extend_from_slice(&hr_data[k * scale * plane..(k * scale + 1) * plane]);
    }
    Ok(PatchPair {
        lr: Tensor::from_vec(&[s_in, crop, crop], lr_data)?,
        hr: Tensor::from_vec(&[span, crop, crop], hr_data)?,
        scale,
    })
}
