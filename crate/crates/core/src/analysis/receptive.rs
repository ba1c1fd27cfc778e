use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::nnops::Module;
use crate::tensor::Tensor;

/// Threshold on the raw gradient magnitude for a pixel to count as support.
pub const SUPPORT_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Saliency {
    pub h: usize,
    pub w: usize,
    /// Channel-summed `|∂y/∂x|`, row-major.
    pub raw: Vec<f64>,
    /// `raw` scaled to a maximum of 1.
    pub normalized: Vec<f64>,
}

impl Saliency {
    pub fn support(&self) -> usize {
        self.raw.iter().filter(|&&v| v > SUPPORT_EPS).count()
    }

    /// Height and width of the smallest box holding the support.
    pub fn support_extent(&self) -> (usize, usize) {
        let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
        for (i, &v) in self.raw.iter().enumerate() {
            if v > SUPPORT_EPS {
                let (y, x) = (i / self.w, i % self.w);
                (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
            }
        }
        if y0 == usize::MAX {
            (0, 0)
        } else {
            (y1 - y0 + 1, x1 - x0 + 1)
        }
    }
}

/// Gradient of the channel-summed output at `center` with respect to a
/// seeded standard-uniform input of `shape = [1, C, H, W]`.
pub fn receptive_probe<M: Module<f64>>(
    module: &M,
    shape: [usize; 4],
    center: (usize, usize),
    seed: u64,
) -> Result<Saliency> {
    let [n, _, h, w] = shape;
    if n != 1 || center.0 >= h || center.1 >= w {
        return Err(shape_err!("probe needs batch 1 and a center inside {h}x{w}, got {shape:?} at {center:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::<f64>::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let (y, cache) = module.forward(&x)?;
    let [yn, yc, yh, yw] = y.dims4();
    if yn != 1 || yh != h || yw != w {
        return Err(shape_err!("probe needs a shape-preserving module, got {:?}", y.shape()));
    }
    let mut dy = Tensor::<f64>::zeros(y.shape());
    for c in 0..yc {
        dy.plane_mut(0, c)[center.0 * w + center.1] = 1.0;
    }
    let dx = module.backward(&cache, &dy, None);
    let mut raw = vec![0.0; h * w];
    for c in 0..shape[1] {
        for (r, g) in raw.iter_mut().zip(dx.plane(0, c)) {
            *r += g.abs();
        }
    }
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let normalized = raw.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
    Ok(Saliency { h, w, raw, normalized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::{InterBranch, IntraBranch};
    use crate::nnops::Conv2d;

    #[test]
    fn identity_has_single_pixel_support() {
        let s = receptive_probe(&Conv2d::<f64>::identity(2), [1, 2, 16, 16], (8, 8), 0).unwrap();
        assert_eq!(s.support(), 1);
        assert_eq!(s.normalized[8 * 16 + 8], 1.0);
    }

    #[test]
    fn conv3x3_has_3x3_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::init(2, 3, 3, 3, &mut rng);
        let s = receptive_probe(&conv, [1, 2, 16, 16], (8, 8), 0).unwrap();
        assert_eq!((s.support(), s.support_extent()), (9, (3, 3)));
    }

    #[test]
    fn inter_branch_is_local_but_wider_than_one_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = InterBranch::<f64>::init(4, &mut rng);
        let s = receptive_probe(&b, [1, 4, 64, 64], (32, 32), 0).unwrap();
        assert!(s.support() > 9 && s.support() < 64 * 64, "{}", s.support());
    }

    #[test]
    fn intra_branch_spans_the_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = IntraBranch::<f64>::init(4, 8, 1, 1, &mut rng);
        let s = receptive_probe(&b, [1, 4, 16, 16], (8, 8), 0).unwrap();
        assert_eq!(s.support(), 256);
    }
}
