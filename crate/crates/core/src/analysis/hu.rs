use crate::error::{validation_err, Result};
use crate::volformat::{IntensityDomain, Volume};

/// An 8-bit display rendering of a volume, slice-major like [`Volume`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageStack {
    pub dims: [usize; 3],
    pub data: Vec<u8>,
}

impl ImageStack {
    pub fn slice(&self, s: usize) -> &[u8] {
        let plane = self.dims[1] * self.dims[2];
        &self.data[s * plane..(s + 1) * plane]
    }

    /// Binary PGM (`P5`) of one slice.
    pub fn slice_pgm(&self, s: usize) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.dims[2], self.dims[1]).into_bytes();
        out.extend_from_slice(self.slice(s));
        out
    }
}

/// Clamps HU values to `[lo, hi]` and maps them linearly onto `0..=255`,
/// rounding half to even.
pub fn hu_window(v: &Volume, lo: f64, hi: f64) -> Result<ImageStack> {
    if !(lo < hi) {
        return Err(validation_err!("window needs lo < hi, got [{lo}, {hi}]"));
    }
    if v.domain() != IntensityDomain::RawHu {
        return Err(validation_err!("HU windowing needs a raw HU volume"));
    }
    let data = v
        .data()
        .iter()
        .map(|&x| (((x as f64).clamp(lo, hi) - lo) / (hi - lo) * 255.0).round_ties_even() as u8)
        .collect();
    Ok(ImageStack { dims: v.dims(), data })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smallest valid volume, starting with `vals` and padded with the last.
    fn raw(vals: &[f32]) -> Volume {
        let data = (0..128).map(|i| vals[i.min(vals.len() - 1)]).collect();
        Volume::new([2, 8, 8], data, [1.0; 3], IntensityDomain::RawHu).unwrap()
    }

    #[test]
    fn window_endpoints_and_midpoint() {
        let img = hu_window(&raw(&[-125.0, 275.0, 75.0, -1000.0, 3000.0]), -125.0, 275.0).unwrap();
        // (75 + 125) / 400 · 255 = 127.5 rounds to the even neighbour.
        assert_eq!(img.data[..5], [0, 255, 128, 0, 255]);
    }

    #[test]
    fn below_window_is_black() {
        let img = hu_window(&raw(&[-900.0; 6]), -125.0, 275.0).unwrap();
        assert!(img.data.iter().all(|&p| p == 0));
    }

    #[test]
    fn rejects_bad_windows_and_domains() {
        assert!(hu_window(&raw(&[0.0]), 10.0, 10.0).is_err());
        assert!(hu_window(&raw(&[0.0]), 10.0, -10.0).is_err());
        let norm = Volume::new([2, 8, 8], vec![0.5; 128], [1.0; 3], IntensityDomain::NormalizedUnit).unwrap();
        assert!(hu_window(&norm, 0.0, 1.0).is_err());
    }

    #[test]
    fn pgm_header() {
        let img = hu_window(&raw(&[0.0, 100.0]), 0.0, 100.0).unwrap();
        let pgm = img.slice_pgm(0);
        assert!(pgm.starts_with(b"P5\n8 8\n255\n\x00\xff"));
        assert_eq!(pgm.len(), 11 + 64);
    }
}
