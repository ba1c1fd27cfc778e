//! Residual units of the network: the two I²Block branches, the plain
//! convolutional block used for ablations, and the cross-view block.

use rand::Rng;

use crate::error::Result;
use crate::nnops::{
    dct2, gelu, gelu_backward, idct2, join, pixel_shuffle2, pixel_unshuffle2, relu, relu_backward,
    window_partition, window_reverse, Conv2d, LayerNorm, Linear, LnCache, Module, Parameters, WindowSeq,
};
use crate::tensor::{Scalar, Tensor};

/// `conv3×3 -> ReLU -> conv3×3`, with arbitrary odd kernels.
#[derive(Clone, Debug)]
pub struct ConvUnit<T> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
}

/// Input of `conv1` and the ReLU output feeding `conv2`.
pub struct ConvUnitCache<T> {
    x: Tensor<T>,
    r: Tensor<T>,
}

impl<T: Scalar> ConvUnit<T> {
    pub fn zeros(c_in: usize, c_out: usize, kh: usize, kw: usize) -> Self {
        ConvUnit { conv1: Conv2d::zeros(c_in, c_out, kh, kw), conv2: Conv2d::zeros(c_out, c_out, kh, kw) }
    }

    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, kh: usize, kw: usize, rng: &mut R) -> Self {
        let conv1 = Conv2d::init(c_in, c_out, kh, kw, rng);
        let conv2 = Conv2d::init(c_out, c_out, kh, kw, rng);
        ConvUnit { conv1, conv2 }
    }
}

impl<T: Scalar> Module<T> for ConvUnit<T> {
    type Cache = ConvUnitCache<T>;

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache)> {
        let (mut r, _) = self.conv1.forward(x)?;
        relu(r.data_mut());
        let (y, _) = self.conv2.forward(&r)?;
        Ok((y, ConvUnitCache { x: x.clone(), r }))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T> {
        let mut grads = grads;
        let mut dr = self.conv2.backward(&cache.r, dy, grads.as_deref_mut().map(|g| &mut g.conv2));
        relu_backward(cache.r.data(), dr.data_mut());
        self.conv1.backward(&cache.x, &dr, grads.map(|g| &mut g.conv1))
    }
}

impl<T: Scalar> Parameters<T> for ConvUnit<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
    }
}

/// Inter-slice branch: `unshuffle -> ConvUnit(4C) -> shuffle`.
#[derive(Clone, Debug)]
pub struct InterBranch<T> {
    pub unit: ConvUnit<T>,
}

impl<T: Scalar> InterBranch<T> {
    pub fn zeros(c: usize) -> Self {
        InterBranch { unit: ConvUnit::zeros(4 * c, 4 * c, 3, 3) }
    }

    pub fn init<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        InterBranch { unit: ConvUnit::init(4 * c, 4 * c, 3, 3, rng) }
    }
}

impl<T: Scalar> Module<T> for InterBranch<T> {
    type Cache = ConvUnitCache<T>;

    fn forward(&self, z: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache)> {
        let u = pixel_unshuffle2(z)?;
        let (y, cache) = self.unit.forward(&u)?;
        Ok((pixel_shuffle2(&y)?, cache))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T> {
        let dy = pixel_unshuffle2(dy).expect("shape checked in forward");
        let du = self.unit.backward(cache, &dy, grads.map(|g| &mut g.unit));
        pixel_shuffle2(&du).expect("shape checked in forward")
    }
}

impl<T: Scalar> Parameters<T> for InterBranch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.unit.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.unit.visit_mut(prefix, f);
    }
}

/// Intra-slice branch.
///
/// `dct2 -> windows -> token MLP -> channel MLP -> reverse -> 1×1 -> idct2`.
/// Inside each window the sequence is `[C, p²]`; the token MLP mixes the `p²`
/// frequency bands, the channel MLP mixes `C`, and both normalize over `C`
/// at every frequency location before mixing.
#[derive(Clone, Debug)]
pub struct IntraBranch<T> {
    pub p: usize,
    pub ln_token: LayerNorm<T>,
    pub token1: Linear<T>,
    pub token2: Linear<T>,
    pub ln_channel: LayerNorm<T>,
    pub chan1: Linear<T>,
    pub chan2: Linear<T>,
    pub proj: Conv2d<T>,
}

pub struct IntraCache<T> {
    meta: WindowSeq<T>,
    ln_token: LnCache<T>,
    a: Vec<T>,
    h1: Vec<T>,
    g1: Vec<T>,
    ln_channel: LnCache<T>,
    b: Vec<T>,
    h2: Vec<T>,
    g2: Vec<T>,
    f: Tensor<T>,
}

impl<T: Scalar> IntraBranch<T> {
    pub fn zeros(c: usize, p: usize, token_expansion: usize, channel_expansion: usize) -> Self {
        let (t, th, ch) = (p * p, p * p * token_expansion, c * channel_expansion);
        IntraBranch {
            p,
            ln_token: LayerNorm::new(c),
            token1: Linear::zeros(t, th),
            token2: Linear::zeros(th, t),
            ln_channel: LayerNorm::new(c),
            chan1: Linear::zeros(c, ch),
            chan2: Linear::zeros(ch, c),
            proj: Conv2d::zeros(c, c, 1, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        c: usize,
        p: usize,
        token_expansion: usize,
        channel_expansion: usize,
        rng: &mut R,
    ) -> Self {
        let (t, th, ch) = (p * p, p * p * token_expansion, c * channel_expansion);
        IntraBranch {
            p,
            ln_token: LayerNorm::new(c),
            token1: Linear::init(t, th, rng),
            token2: Linear::init(th, t, rng),
            ln_channel: LayerNorm::new(c),
            chan1: Linear::init(c, ch, rng),
            chan2: Linear::init(ch, c, rng),
            proj: Conv2d::init(c, c, 1, 1, rng),
        }
    }

    /// Output of the two mixer layers, still in the frequency domain and in
    /// window layout.
    fn mix(&self, x: &[T], groups: usize, c: usize) -> (Vec<T>, [Vec<T>; 6], [LnCache<T>; 2]) {
        let t = self.p * self.p;
        let (a, ln_t) = self.ln_token.forward_axis(x, groups, t);
        let h1 = self.token1.forward_rows(&a, groups * c);
        let g1 = gelu(&h1);
        let mut x1 = self.token2.forward_rows(&g1, groups * c);
        for (o, &v) in x1.iter_mut().zip(x) {
            *o += v;
        }
        let (b, ln_c) = self.ln_channel.forward_axis(&x1, groups, t);
        let h2 = self.chan1.forward_cols(&b, groups, t);
        let g2 = gelu(&h2);
        let mut x2 = self.chan2.forward_cols(&g2, groups, t);
        for (o, &v) in x2.iter_mut().zip(&x1) {
            *o += v;
        }
        (x2, [a, h1, g1, b, h2, g2], [ln_t, ln_c])
    }
}

impl<T: Scalar> Module<T> for IntraBranch<T> {
    type Cache = IntraCache<T>;

    fn forward(&self, z: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache)> {
        let [n, c, _, _] = z.dims4();
        let ws = window_partition(&dct2(z), self.p)?;
        let groups = n * ws.n_windows();
        let (x2, [a, h1, g1, b, h2, g2], [ln_token, ln_channel]) = self.mix(&ws.data, groups, c);
        let meta = ws.with_data(Vec::new());
        let f = window_reverse(&meta.with_data(x2))?;
        let (q, _) = self.proj.forward(&f)?;
        let cache = IntraCache { meta, ln_token, a, h1, g1, ln_channel, b, h2, g2, f };
        Ok((idct2(&q), cache))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T> {
        let mut g = grads;
        let c = cache.meta.channels;
        let t = self.p * self.p;
        let groups = cache.meta.batch * cache.meta.n_windows();

        let dq = dct2(dy);
        let df = self.proj.backward(&cache.f, &dq, g.as_deref_mut().map(|g| &mut g.proj));
        let dx2 = window_partition(&df, self.p).expect("shape checked in forward").data;

        let dg2 = self.chan2.backward_cols(&cache.g2, &dx2, groups, t, g.as_deref_mut().map(|g| &mut g.chan2));
        let dh2 = gelu_backward(&cache.h2, &dg2);
        let db = self.chan1.backward_cols(&cache.b, &dh2, groups, t, g.as_deref_mut().map(|g| &mut g.chan1));
        let mut dx1 = self.ln_channel.backward_axis(
            &cache.ln_channel,
            &db,
            groups,
            t,
            g.as_deref_mut().map(|g| &mut g.ln_channel),
        );
        for (d, &v) in dx1.iter_mut().zip(&dx2) {
            *d += v;
        }

        let dg1 = self.token2.backward_rows(&cache.g1, &dx1, groups * c, g.as_deref_mut().map(|g| &mut g.token2));
        let dh1 = gelu_backward(&cache.h1, &dg1);
        let da = self.token1.backward_rows(&cache.a, &dh1, groups * c, g.as_deref_mut().map(|g| &mut g.token1));
        let mut dx = self.ln_token.backward_axis(&cache.ln_token, &da, groups, t, g.map(|g| &mut g.ln_token));
        for (d, &v) in dx.iter_mut().zip(&dx1) {
            *d += v;
        }

        let dd = window_reverse(&cache.meta.with_data(dx)).expect("shape checked in forward");
        idct2(&dd)
    }
}

impl<T: Scalar> Parameters<T> for IntraBranch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.ln_token.visit(&join(prefix, "ln_token"), f);
        self.token1.visit(&join(prefix, "token1"), f);
        self.token2.visit(&join(prefix, "token2"), f);
        self.ln_channel.visit(&join(prefix, "ln_channel"), f);
        self.chan1.visit(&join(prefix, "chan1"), f);
        self.chan2.visit(&join(prefix, "chan2"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.ln_token.visit_mut(&join(prefix, "ln_token"), f);
        self.token1.visit_mut(&join(prefix, "token1"), f);
        self.token2.visit_mut(&join(prefix, "token2"), f);
        self.ln_channel.visit_mut(&join(prefix, "ln_channel"), f);
        self.chan1.visit_mut(&join(prefix, "chan1"), f);
        self.chan2.visit_mut(&join(prefix, "chan2"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

/// `out = z + inter(z) + intra(z)`; either branch may be absent.
#[derive(Clone, Debug)]
pub struct I2Block<T> {
    pub inter: Option<InterBranch<T>>,
    pub intra: Option<IntraBranch<T>>,
}

pub struct I2Cache<T> {
    inter: Option<ConvUnitCache<T>>,
    intra: Option<IntraCache<T>>,
}

/// Per-branch outputs of one block, for analysis.
pub struct BranchOutputs<T> {
    pub inter: Option<Tensor<T>>,
    pub intra: Option<Tensor<T>>,
    pub out: Tensor<T>,
}

impl<T: Scalar> I2Block<T> {
    pub fn forward_branches(&self, z: &Tensor<T>) -> Result<BranchOutputs<T>> {
        let mut out = z.clone();
        let inter = match &self.inter {
            Some(b) => Some(b.forward(z)?.0),
            None => None,
        };
        let intra = match &self.intra {
            Some(b) => Some(b.forward(z)?.0),
            None => None,
        };
        for y in inter.iter().chain(intra.iter()) {
            out.add_assign(y);
        }
        Ok(BranchOutputs { inter, intra, out })
    }
}

impl<T: Scalar> Module<T> for I2Block<T> {
    type Cache = I2Cache<T>;

    fn forward(&self, z: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache)> {
        let mut out = z.clone();
        let mut cache = I2Cache { inter: None, intra: None };
        if let Some(b) = &self.inter {
            let (y, c) = b.forward(z)?;
            out.add_assign(&y);
            cache.inter = Some(c);
        }
        if let Some(b) = &self.intra {
            let (y, c) = b.forward(z)?;
            out.add_assign(&y);
            cache.intra = Some(c);
        }
        Ok((out, cache))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T> {
        let (g_inter, g_intra) = match grads {
            Some(g) => (g.inter.as_mut(), g.intra.as_mut()),
            None => (None, None),
        };
        let mut dz = dy.clone();
        if let (Some(b), Some(c)) = (&self.inter, &cache.inter) {
            dz.add_assign(&b.backward(c, dy, g_inter));
        }
        if let (Some(b), Some(c)) = (&self.intra, &cache.intra) {
            dz.add_assign(&b.backward(c, dy, g_intra));
        }
        dz
    }
}

impl<T: Scalar> Parameters<T> for I2Block<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Some(b) = &self.inter {
            b.visit(&join(prefix, "inter"), f);
        }
        if let Some(b) = &self.intra {
            b.visit(&join(prefix, "intra"), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(b) = &mut self.inter {
            b.visit_mut(&join(prefix, "inter"), f);
        }
        if let Some(b) = &mut self.intra {
            b.visit_mut(&join(prefix, "intra"), f);
        }
    }
}

/// Ablation baseline: `z + ConvUnit(z)` at full resolution.
#[derive(Clone, Debug)]
pub struct PlainBlock<T> {
    pub unit: ConvUnit<T>,
}

impl<T: Scalar> Module<T> for PlainBlock<T> {
    type Cache = ConvUnitCache<T>;

    fn forward(&self, z: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache)> {
        let (mut y, cache) = self.unit.forward(z)?;
        y.add_assign(z);
        Ok((y, cache))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T> {
        let mut dz = self.unit.backward(cache, dy, grads.map(|g| &mut g.unit));
        dz.add_assign(dy);
        dz
    }
}

impl<T: Scalar> Parameters<T> for PlainBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.unit.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.unit.visit_mut(prefix, f);
    }
}

/// Cross-view block.
///
/// `zn = LN(z)`; the sagittal path is `1×1 -> shuffle -> ConvUnit(3×1) ->
/// unshuffle`, the coronal path the same with `1×3` kernels; the output is
/// `sag + cor + z` with the unnormalized `z`.
#[derive(Clone, Debug)]
pub struct CrossView<T> {
    pub ln: LayerNorm<T>,
    pub w_sag: Conv2d<T>,
    pub w_cor: Conv2d<T>,
    pub sag: ConvUnit<T>,
    pub cor: ConvUnit<T>,
}

pub struct CrossViewCache<T> {
    ln: LnCache<T>,
    zn: Tensor<T>,
    sag: ConvUnitCache<T>,
    cor: ConvUnitCache<T>,
}

impl<T: Scalar> CrossView<T> {
    pub fn zeros(c: usize) -> Self {
        let q = c / 4;
        CrossView {
            ln: LayerNorm::new(c),
            w_sag: Conv2d::zeros(c, c, 1, 1),
            w_cor: Conv2d::zeros(c, c, 1, 1),
            sag: ConvUnit::zeros(q, q, 3, 1),
            cor: ConvUnit::zeros(q, q, 1, 3),
        }
    }

    pub fn init<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        let q = c / 4;
        CrossView {
            ln: LayerNorm::new(c),
            w_sag: Conv2d::init(c, c, 1, 1, rng),
            w_cor: Conv2d::init(c, c, 1, 1, rng),
            sag: ConvUnit::init(q, q, 3, 1, rng),
            cor: ConvUnit::init(q, q, 1, 3, rng),
        }
    }

    fn path(w: &Conv2d<T>, unit: &ConvUnit<T>, zn: &Tensor<T>) -> Result<(Tensor<T>, ConvUnitCache<T>)> {
        let (s, _) = w.forward(zn)?;
        let (y, cache) = unit.forward(&pixel_shuffle2(&s)?)?;
        Ok((pixel_unshuffle2(&y)?, cache))
    }

    fn path_backward(
        w: &Conv2d<T>,
        unit: &ConvUnit<T>,
        zn: &Tensor<T>,
        cache: &ConvUnitCache<T>,
        dy: &Tensor<T>,
        g_w: Option<&mut Conv2d<T>>,
        g_unit: Option<&mut ConvUnit<T>>,
    ) -> Tensor<T> {
        let dy = pixel_shuffle2(dy).expect("shape checked in forward");
        let ds = unit.backward(cache, &dy, g_unit);
        let ds = pixel_unshuffle2(&ds).expect("shape checked in forward");
        w.backward(zn, &ds, g_w)
    }
}

impl<T: Scalar> Module<T> for CrossView<T> {
    type Cache = CrossViewCache<T>;

    fn forward(&self, z: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache)> {
        let (zn, ln) = self.ln.forward_channels(z);
        let (ys, sag) = Self::path(&self.w_sag, &self.sag, &zn)?;
        let (yc, cor) = Self::path(&self.w_cor, &self.cor, &zn)?;
        let mut out = z.clone();
        out.add_assign(&ys);
        out.add_assign(&yc);
        Ok((out, CrossViewCache { ln, zn, sag, cor }))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T> {
        let (g_ln, g_ws, g_wc, g_s, g_c) = match grads {
            Some(g) => (Some(&mut g.ln), Some(&mut g.w_sag), Some(&mut g.w_cor), Some(&mut g.sag), Some(&mut g.cor)),
            None => (None, None, None, None, None),
        };
        let mut dzn = Self::path_backward(&self.w_sag, &self.sag, &cache.zn, &cache.sag, dy, g_ws, g_s);
        dzn.add_assign(&Self::path_backward(&self.w_cor, &self.cor, &cache.zn, &cache.cor, dy, g_wc, g_c));
        let mut dz = self.ln.backward_channels(&cache.ln, &dzn, g_ln);
        dz.add_assign(dy);
        dz
    }
}

impl<T: Scalar> Parameters<T> for CrossView<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.ln.visit(&join(prefix, "ln"), f);
        self.w_sag.visit(&join(prefix, "w_sag"), f);
        self.w_cor.visit(&join(prefix, "w_cor"), f);
        self.sag.visit(&join(prefix, "sag"), f);
        self.cor.visit(&join(prefix, "cor"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.ln.visit_mut(&join(prefix, "ln"), f);
        self.w_sag.visit_mut(&join(prefix, "w_sag"), f);
        self.w_cor.visit_mut(&join(prefix, "w_cor"), f);
        self.sag.visit_mut(&join(prefix, "sag"), f);
        self.cor.visit_mut(&join(prefix, "cor"), f);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nnops::gradcheck::{check_module_input, check_module_params};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn inter_branch_shapes_and_zero_weights() {
        let b = InterBranch::<f32>::init(32, &mut rng(0));
        let z = Tensor::from_fn(&[1, 32, 64, 64], |i| (i % 17) as f32 * 0.1);
        assert_eq!(b.forward(&z).unwrap().0.shape(), &[1, 32, 64, 64]);
        let zero = InterBranch::<f32>::zeros(32);
        assert!(zero.forward(&z).unwrap().0.data().iter().all(|&v| v == 0.0));
        assert!(b.forward(&Tensor::zeros(&[1, 32, 63, 64])).is_err());
    }

    #[test]
    fn inter_branch_gradients() {
        let b = InterBranch::<f64>::init(8, &mut rng(1));
        let rep = check_module_input(&b, &[1, 8, 8, 8], 1, 1e-3);
        assert!(rep.passed, "{rep:?}");
        let rep = check_module_params(&b, &[1, 8, 8, 8], 2, 1e-3, 16);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn intra_branch_shapes() {
        let b = IntraBranch::<f32>::init(32, 16, 1, 1, &mut rng(2));
        let z = Tensor::from_fn(&[1, 32, 64, 64], |i| ((i * 31) % 101) as f32 / 101.0);
        assert_eq!(b.forward(&z).unwrap().0.shape(), &[1, 32, 64, 64]);
        assert!(b.forward(&Tensor::zeros(&[1, 32, 40, 64])).is_err());
    }

    #[test]
    fn intra_branch_configured_identity() {
        let mut b = IntraBranch::<f32>::init(32, 16, 1, 1, &mut rng(3));
        b.token2 = Linear::zeros(256, 256);
        b.chan2 = Linear::zeros(32, 32);
        b.proj = Conv2d::identity(32);
        let z = Tensor::from_fn(&[1, 32, 64, 64], |i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5);
        let (y, _) = b.forward(&z).unwrap();
        let scale = z.data().iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
        assert!(y.max_abs_diff(&z) <= 1e-5 * scale, "{}", y.max_abs_diff(&z));
    }

    #[test]
    fn intra_branch_gradients() {
        let b = IntraBranch::<f64>::init(8, 8, 1, 1, &mut rng(4));
        let rep = check_module_input(&b, &[1, 8, 16, 16], 3, 1e-3);
        assert!(rep.passed, "{rep:?}");
        let rep = check_module_params(&b, &[1, 8, 16, 16], 4, 1e-3, 12);
        assert!(rep.passed, "{rep:?}");
        let wide = IntraBranch::<f64>::init(4, 4, 2, 3, &mut rng(5));
        let rep = check_module_params(&wide, &[2, 4, 8, 8], 5, 1e-3, 8);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn i2block_residual_identity_and_gradients() {
        let zero = I2Block::<f64> { inter: Some(InterBranch::zeros(8)), intra: None };
        let z = Tensor::from_fn(&[1, 8, 8, 8], |i| (i as f64 * 0.37).sin());
        assert_eq!(zero.forward(&z).unwrap().0, z);

        let mut intra = IntraBranch::init(8, 8, 1, 1, &mut rng(6));
        intra.proj = Conv2d::zeros(8, 8, 1, 1);
        let blk = I2Block { inter: Some(InterBranch::zeros(8)), intra: Some(intra) };
        assert!(blk.forward(&z).unwrap().0.max_abs_diff(&z) == 0.0);

        let blk = I2Block::<f64> {
            inter: Some(InterBranch::init(8, &mut rng(7))),
            intra: Some(IntraBranch::init(8, 8, 1, 1, &mut rng(8))),
        };
        let rep = check_module_input(&blk, &[1, 8, 8, 8], 6, 1e-3);
        assert!(rep.passed, "{rep:?}");
        let rep = check_module_params(&blk, &[1, 8, 8, 8], 7, 1e-3, 6);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn plain_block_gradients() {
        let blk = PlainBlock::<f64> { unit: ConvUnit::init(4, 4, 3, 3, &mut rng(9)) };
        let rep = check_module_input(&blk, &[2, 4, 6, 6], 8, 1e-3);
        assert!(rep.passed, "{rep:?}");
        let rep = check_module_params(&blk, &[2, 4, 6, 6], 9, 1e-3, 20);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn cross_view_shapes_identity_and_gradients() {
        let cv = CrossView::<f32>::init(32, &mut rng(10));
        let z = Tensor::from_fn(&[2, 32, 16, 16], |i| ((i * 13) % 29) as f32 / 29.0);
        assert_eq!(cv.forward(&z).unwrap().0.shape(), z.shape());

        let mut cv = CrossView::<f64>::init(8, &mut rng(11));
        cv.sag = ConvUnit::zeros(2, 2, 3, 1);
        cv.cor = ConvUnit::zeros(2, 2, 1, 3);
        let z = Tensor::from_fn(&[1, 8, 8, 8], |i| (i as f64 * 0.11).cos());
        assert_eq!(cv.forward(&z).unwrap().0, z);

        let cv = CrossView::<f64>::init(8, &mut rng(12));
        let rep = check_module_input(&cv, &[1, 8, 8, 8], 10, 1e-3);
        assert!(rep.passed, "{rep:?}");
        let rep = check_module_params(&cv, &[1, 8, 8, 8], 11, 1e-3, 12);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn directional_kernels() {
        let cv = CrossView::<f32>::zeros(8);
        assert_eq!(cv.sag.conv1.weight.shape(), &[2, 2, 3, 1]);
        assert_eq!(cv.cor.conv2.weight.shape(), &[2, 2, 1, 3]);
    }
}
