use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Error, Result};

/// Default CT window mapped onto `[0, 1]` by [`normalize_intensity`].
pub const HU_LO: f64 = -1024.0;
pub const HU_HI: f64 = 3071.0;

const MAGIC: &[u8; 4] = b"RVL1";
const HEADER_LEN: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityDomain {
    RawHu,
    NormalizedUnit,
}

impl IntensityDomain {
    fn code(self) -> u8 {
        match self {
            IntensityDomain::RawHu => 0,
            IntensityDomain::NormalizedUnit => 1,
        }
    }
}

/// Scalar volume indexed `[s, h, w]`, slice-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
    spacing: [f64; 3],
    domain: IntensityDomain,
}

impl Volume {
    /// Builds a volume, checking every invariant.
    pub fn new(
        dims: [usize; 3],
        data: Vec<f32>,
        spacing: [f64; 3],
        domain: IntensityDomain,
    ) -> Result<Self> {
        let [s, h, w] = dims;
        if s < 2 || h < 8 || w < 8 {
            return Err(validation_err!("volume dims {:?} violate S >= 2, H >= 8, W >= 8", dims));
        }
        if data.len() != s * h * w {
            return Err(validation_err!(
                "volume dims {:?} need {} voxels, got {}",
                dims,
                s * h * w,
                data.len()
            ));
        }
        if !spacing.iter().all(|&d| d > 0.0 && d.is_finite()) {
            return Err(validation_err!("spacing {:?} must be strictly positive", spacing));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(validation_err!("volume contains non-finite voxel {v}"));
        }
        if domain == IntensityDomain::NormalizedUnit {
            if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(validation_err!("normalized volume has voxel {v} outside [0, 1]"));
            }
        }
        Ok(Volume { dims, data, spacing, domain })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn slices(&self) -> usize {
        self.dims[0]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn domain(&self) -> IntensityDomain {
        self.domain
    }

    pub fn slice(&self, s: usize) -> &[f32] {
        let plane = self.dims[1] * self.dims[2];
        &self.data[s * plane..(s + 1) * plane]
    }

    #[inline]
    pub fn at(&self, s: usize, h: usize, w: usize) -> f32 {
        self.data[(s * self.dims[1] + h) * self.dims[2] + w]
    }

    /// Copy of slices `start..start+count`, spacing unchanged.
    pub fn slab(&self, start: usize, count: usize) -> Result<Volume> {
        let plane = self.dims[1] * self.dims[2];
        if start + count > self.dims[0] {
            return Err(validation_err!("slab {start}+{count} exceeds {} slices", self.dims[0]));
        }
        Volume::new(
            [count, self.dims[1], self.dims[2]],
            self.data[start * plane..(start + count) * plane].to_vec(),
            self.spacing,
            self.domain,
        )
    }

    /// Symmetric in-plane center crop.
    pub fn center_crop(&self, ch: usize, cw: usize) -> Result<Volume> {
        let [s, h, w] = self.dims;
        if ch > h || cw > w {
            return Err(validation_err!("crop {ch}x{cw} larger than plane {h}x{w}"));
        }
        let (top, left) = ((h - ch) / 2, (w - cw) / 2);
        let mut data = Vec::with_capacity(s * ch * cw);
        for si in 0..s {
            for hi in top..top + ch {
                let row = (si * h + hi) * w;
                data.extend_from_slice(&self.data[row + left..row + left + cw]);
            }
        }
        Volume::new([s, ch, cw], data, self.spacing, self.domain)
    }
}

/// Writes `v` in RVL1 layout: 48-byte header then little-endian `f32` voxels.
pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    // Re-validate; a Volume can only be built valid, but be explicit at the I/O edge.
    let v = Volume::new(v.dims, v.data.clone(), v.spacing, v.domain)?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * v.data.len());
    buf.extend_from_slice(MAGIC);
    for d in v.dims {
        let d = u32::try_from(d).map_err(|_| validation_err!("dimension {d} exceeds u32"))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for sp in v.spacing {
        buf.extend_from_slice(&sp.to_le_bytes());
    }
    buf.push(v.domain.code());
    buf.extend_from_slice(&[0u8; 7]);
    debug_assert_eq!(buf.len(), HEADER_LEN);
    for x in &v.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

/// Parses an in-memory RVL1 image.
pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format("magic", "bad magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("header", format!("truncated header ({} bytes)", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dims = [u32_at(4), u32_at(8), u32_at(12)];
    let spacing = [f64_at(16), f64_at(24), f64_at(32)];
    let domain = match bytes[40] {
        0 => IntensityDomain::RawHu,
        1 => IntensityDomain::NormalizedUnit,
        other => return Err(Error::format("intensity_domain", format!("unknown code {other}"))),
    };
    if bytes[41..48].iter().any(|&b| b != 0) {
        return Err(Error::format("padding", "header padding bytes must be zero"));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("dims", "dimension product overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(Error::format(
            "payload length",
            format!("header dims {:?} need {} bytes, found {}", dims, count * 4, payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(dims, data, spacing, domain).map_err(|e| Error::format("volume", e.to_string()))
}

/// Maps raw HU into `[0, 1]` through the fixed window `[lo, hi]`.
pub fn normalize_intensity(v: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    if !(lo < hi) {
        return Err(validation_err!("normalization window needs lo < hi, got [{lo}, {hi}]"));
    }
    if v.domain != IntensityDomain::RawHu {
        return Err(validation_err!("normalize_intensity expects a raw_hu volume"));
    }
    let span = hi - lo;
    let data = v
        .data
        .iter()
        .map(|&x| ((x as f64 - lo) / span).clamp(0.0, 1.0) as f32)
        .collect();
    Volume::new(v.dims, data, v.spacing, IntensityDomain::NormalizedUnit)
}

/// Decimates along the axial axis, keeping slices `0, R, 2R, ...`.
///
/// Trailing slices that would leave `(S_hr - 1) mod R != 0` are trimmed from
/// the high-resolution reference. Returns `(lr, hr)`.
pub fn downsample_axial(v: &Volume, scale: usize) -> Result<(Volume, Volume)> {
    if scale < 1 {
        return Err(validation_err!("scale factor must be >= 1, got {scale}"));
    }
    let s_hr = v.dims[0];
    if s_hr < scale + 1 {
        return Err(validation_err!(
            "too few slices: {s_hr} slices cannot be decimated by {scale} (need >= {})",
            scale + 1
        ));
    }
    let s_lr = (s_hr - 1) / scale + 1;
    let hr = v.slab(0, (s_lr - 1) * scale + 1)?;
    let plane = v.dims[1] * v.dims[2];
    let mut data = Vec::with_capacity(s_lr * plane);
    for k in 0..s_lr {
        data.extend_from_slice(hr.slice(k * scale));
    }
    let mut spacing = v.spacing;
    spacing[0] *= scale as f64;
    let lr = Volume::new([s_lr, v.dims[1], v.dims[2]], data, spacing, v.domain)?;
    Ok((lr, hr))
}
