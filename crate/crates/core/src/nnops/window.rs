use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Non-overlapping `p×p` windows of a feature map, laid out
/// `[N, n_windows, C, p²]`.
///
/// Windows are numbered row-major over the plane and positions inside a window
/// are flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSeq<T> {
    pub data: Vec<T>,
    pub batch: usize,
    pub channels: usize,
    pub p: usize,
    pub height: usize,
    pub width: usize,
}

impl<T: Scalar> WindowSeq<T> {
    pub fn n_windows(&self) -> usize {
        (self.height / self.p) * (self.width / self.p)
    }

    pub fn tokens(&self) -> usize {
        self.p * self.p
    }

    fn check(&self) -> Result<()> {
        let p = self.p;
        if p == 0 || self.height % p != 0 || self.width % p != 0 {
            return Err(shape_err!(
                "window size {p} does not tile {}x{}",
                self.height,
                self.width
            ));
        }
        if self.data.len() != self.batch * self.n_windows() * self.channels * p * p {
            return Err(shape_err!("window buffer length does not match its metadata"));
        }
        Ok(())
    }

    /// Same metadata, different payload.
    pub fn with_data(&self, data: Vec<T>) -> Self {
        WindowSeq { data, ..*self }
    }
}

pub fn window_partition<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<WindowSeq<T>> {
    let [n, c, h, w] = x.dims4();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(shape_err!("window size {p} must divide H={h} and W={w}"));
    }
    let (wh, ww) = (h / p, w / p);
    let nw = wh * ww;
    let mut data = vec![T::zero(); x.len()];
    let src = x.data();
    for b in 0..n {
        for ch in 0..c {
            let plane = &src[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for wy in 0..wh {
                for wx in 0..ww {
                    let wi = wy * ww + wx;
                    let dst = ((b * nw + wi) * c + ch) * p * p;
                    for py in 0..p {
                        let s = (wy * p + py) * w + wx * p;
                        data[dst + py * p..dst + (py + 1) * p].copy_from_slice(&plane[s..s + p]);
                    }
                }
            }
        }
    }
    Ok(WindowSeq { data, batch: n, channels: c, p, height: h, width: w })
}

pub fn window_reverse<T: Scalar>(ws: &WindowSeq<T>) -> Result<Tensor<T>> {
    ws.check()?;
    let (n, c, p, h, w) = (ws.batch, ws.channels, ws.p, ws.height, ws.width);
    let ww = w / p;
    let nw = ws.n_windows();
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let dst = out.data_mut();
    for b in 0..n {
        for wi in 0..nw {
            let (wy, wx) = (wi / ww, wi % ww);
            for ch in 0..c {
                let src = ((b * nw + wi) * c + ch) * p * p;
                let plane = (b * c + ch) * h * w;
                for py in 0..p {
                    let d = plane + (wy * p + py) * w + wx * p;
                    dst[d..d + p].copy_from_slice(&ws.data[src + py * p..src + (py + 1) * p]);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::nnops::grad_check;

    #[test]
    fn window_count() {
        let x = Tensor::<f32>::zeros(&[1, 2, 256, 256]);
        assert_eq!(window_partition(&x, 16).unwrap().n_windows(), 256);
        assert!(window_partition(&Tensor::<f32>::zeros(&[1, 1, 24, 32]), 16).is_err());
    }

    #[test]
    fn single_window_is_a_reshape() {
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| i as f32);
        let ws = window_partition(&x, 4).unwrap();
        assert_eq!(ws.n_windows(), 1);
        assert_eq!(ws.data, x.data());
    }

    #[test]
    fn row_major_window_order() {
        // 4x4 plane, p=2: window 1 is the top-right 2x2 tile.
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32);
        let ws = window_partition(&x, 2).unwrap();
        assert_eq!(&ws.data[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn swapped_windows_do_not_reverse_to_original() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32);
        let mut ws = window_partition(&x, 2).unwrap();
        let (a, b) = ws.data.split_at_mut(4);
        a.swap_with_slice(&mut b[..4]);
        assert_ne!(window_reverse(&ws).unwrap(), x);
    }

    #[test]
    fn inconsistent_metadata_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        let mut ws = window_partition(&x, 4).unwrap();
        ws.p = 3;
        assert!(window_reverse(&ws).is_err());
        ws.p = 4;
        ws.data.pop();
        assert!(window_reverse(&ws).is_err());
    }

    #[test]
    fn gradient_is_a_permutation() {
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f64).cos());
        let rep = grad_check(
            |x| {
                let y = window_reverse(&window_partition(x, 2).unwrap()).unwrap();
                (y.sum(), Tensor::full(x.shape(), 1.0))
            },
            &x,
            1e-3,
        );
        assert!(rep.passed);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(n in 1usize..3, c in 1usize..4, wh in 1usize..4, ww in 1usize..4,
                                p in 1usize..5) {
            let x = Tensor::from_fn(&[n, c, wh * p, ww * p], |i| (i as f32 * 0.37).sin());
            let back = window_reverse(&window_partition(&x, p).unwrap()).unwrap();
            prop_assert_eq!(back, x);
        }
    }
}
