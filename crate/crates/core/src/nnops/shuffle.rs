//! Factor-2 pixel shuffle and unshuffle.
//!
//! Channel convention shared by both directions:
//! `unshuffled[n, 4c + 2i + j, h, w] = x[n, c, 2h + i, 2w + j]`.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// `[N, C, H, W] -> [N, 4C, H/2, W/2]`.
pub fn pixel_unshuffle2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("pixel_unshuffle2 needs even H and W, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, 4 * c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let plane = &src[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for i in 0..2 {
                for j in 0..2 {
                    let oc = 4 * ch + 2 * i + j;
                    let o = &mut dst[(b * 4 * c + oc) * ho * wo..(b * 4 * c + oc + 1) * ho * wo];
                    for y in 0..ho {
                        let row = &plane[(2 * y + i) * w..(2 * y + i + 1) * w];
                        for (xo, v) in o[y * wo..(y + 1) * wo].iter_mut().enumerate() {
                            *v = row[2 * xo + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `[N, 4C, H, W] -> [N, C, 2H, 2W]`, the exact inverse of [`pixel_unshuffle2`].
pub fn pixel_shuffle2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c4, h, w] = x.dims4();
    if c4 % 4 != 0 {
        return Err(shape_err!("pixel_shuffle2 needs C divisible by 4, got {c4}"));
    }
    let c = c4 / 4;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let o = &mut dst[(b * c + ch) * ho * wo..(b * c + ch + 1) * ho * wo];
            for i in 0..2 {
                for j in 0..2 {
                    let ic = 4 * ch + 2 * i + j;
                    let plane = &src[(b * c4 + ic) * h * w..(b * c4 + ic + 1) * h * w];
                    for y in 0..h {
                        let row = &mut o[(2 * y + i) * wo..(2 * y + i + 1) * wo];
                        for (xi, &v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                            row[2 * xi + j] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
