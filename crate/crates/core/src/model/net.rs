use rand::Rng;

use super::config::{BlockKind, ModelConfig};
use super::interp::{lerp_channels, lerp_channels_backward};
use super::layers::{ConvUnit, ConvUnitCache, CrossView, CrossViewCache, I2Block, I2Cache, InterBranch, IntraBranch, PlainBlock};
use crate::error::{shape_err, Result};
use crate::nnops::{join, Conv2d, Module, Parameters};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub enum Block<T> {
    I2(I2Block<T>),
    Plain(PlainBlock<T>),
}

pub enum BlockCache<T> {
    I2(I2Cache<T>),
    Plain(ConvUnitCache<T>),
}

impl<T: Scalar> Block<T> {
    fn zeros(cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        match cfg.block {
            BlockKind::Plain => Block::Plain(PlainBlock { unit: ConvUnit::zeros(c, c, 3, 3) }),
            BlockKind::I2 => Block::I2(I2Block {
                inter: cfg.inter.then(|| InterBranch::zeros(c)),
                intra: cfg
                    .intra
                    .then(|| IntraBranch::zeros(c, cfg.window, cfg.token_expansion, cfg.channel_expansion)),
            }),
        }
    }

    fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        match cfg.block {
            BlockKind::Plain => Block::Plain(PlainBlock { unit: ConvUnit::init(c, c, 3, 3, rng) }),
            BlockKind::I2 => {
                let inter = cfg.inter.then(|| InterBranch::init(c, rng));
                let intra = cfg
                    .intra
                    .then(|| IntraBranch::init(c, cfg.window, cfg.token_expansion, cfg.channel_expansion, rng));
                Block::I2(I2Block { inter, intra })
            }
        }
    }
}

impl<T: Scalar> Module<T> for Block<T> {
    type Cache = BlockCache<T>;

    fn forward(&self, z: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache)> {
        Ok(match self {
            Block::I2(b) => {
                let (y, c) = b.forward(z)?;
                (y, BlockCache::I2(c))
            }
            Block::Plain(b) => {
                let (y, c) = b.forward(z)?;
                (y, BlockCache::Plain(c))
            }
        })
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T> {
        match (self, cache) {
            (Block::I2(b), BlockCache::I2(c)) => b.backward(
                c,
                dy,
                grads.map(|g| match g {
                    Block::I2(g) => g,
                    Block::Plain(_) => unreachable!("gradient twin has a different layout"),
                }),
            ),
            (Block::Plain(b), BlockCache::Plain(c)) => b.backward(
                c,
                dy,
                grads.map(|g| match g {
                    Block::Plain(g) => g,
                    Block::I2(_) => unreachable!("gradient twin has a different layout"),
                }),
            ),
            _ => unreachable!("cache does not belong to this block"),
        }
    }
}

impl<T: Scalar> Parameters<T> for Block<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        match self {
            Block::I2(b) => b.visit(prefix, f),
            Block::Plain(b) => b.visit(prefix, f),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            Block::I2(b) => b.visit_mut(prefix, f),
            Block::Plain(b) => b.visit_mut(prefix, f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Block(usize),
    CrossView(usize),
}

enum StageCache<T> {
    Block(BlockCache<T>),
    CrossView(CrossViewCache<T>),
}

pub struct NetCache<T> {
    x: Tensor<T>,
    z0: Tensor<T>,
    stages: Vec<StageCache<T>>,
    z_last: Tensor<T>,
}

/// Intermediate activations of one inference pass.
pub struct Trace<T> {
    /// Head output.
    pub head: Tensor<T>,
    pub blocks: Vec<BlockTrace<T>>,
}

pub struct BlockTrace<T> {
    pub input: Tensor<T>,
    pub inter: Option<Tensor<T>>,
    pub intra: Option<Tensor<T>>,
    pub output: Tensor<T>,
}

/// Head conv, residual stack with interleaved cross-view blocks, tail conv,
/// and the optional global linear-interpolation residual.
#[derive(Clone, Debug)]
pub struct I3Net<T> {
    config: ModelConfig,
    pub head: Conv2d<T>,
    pub blocks: Vec<Block<T>>,
    pub cross_views: Vec<CrossView<T>>,
    pub tail: Conv2d<T>,
}

impl<T: Scalar> I3Net<T> {
    /// Every weight zero, LayerNorm affines at `(1, 0)`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        Ok(I3Net {
            config: config.clone(),
            head: Conv2d::zeros(config.s_in, c, 3, 3),
            blocks: (0..config.n_blocks).map(|_| Block::zeros(config)).collect(),
            cross_views: config.cvb_positions.iter().map(|_| CrossView::zeros(c)).collect(),
            tail: Conv2d::zeros(c, config.out_slices(), 3, 3),
        })
    }

    /// Kaiming-uniform convs and linears, zero tail.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let head = Conv2d::init(config.s_in, c, 3, 3, rng);
        let mut blocks = Vec::with_capacity(config.n_blocks);
        let mut cross_views = Vec::with_capacity(config.cvb_positions.len());
        for i in 1..=config.n_blocks {
            blocks.push(Block::init(config, rng));
            if config.cvb_positions.contains(&i) {
                cross_views.push(CrossView::init(c, rng));
            }
        }
        let tail = Conv2d::zeros(c, config.out_slices(), 3, 3);
        Ok(I3Net { config: config.clone(), head, blocks, cross_views, tail })
    }

    /// [`I3Net::init`] driven by a ChaCha8 stream seeded with `seed`.
    pub fn seeded(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init(config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> I3Net<U> {
        let mut out = I3Net::<U>::zeros(&self.config).expect("config already validated");
        let mut src = Vec::new();
        self.visit("", &mut |_, t| src.push(t.cast::<U>()));
        let mut it = src.into_iter();
        out.visit_mut("", &mut |_, t| *t = it.next().expect("same layout"));
        out
    }

    fn schedule(&self) -> Vec<Stage> {
        let mut out = Vec::with_capacity(self.blocks.len() + self.cross_views.len());
        let mut k = 0;
        for i in 0..self.blocks.len() {
            out.push(Stage::Block(i));
            if self.config.cvb_positions.contains(&(i + 1)) {
                out.push(Stage::CrossView(k));
                k += 1;
            }
        }
        out
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 4 {
            return Err(shape_err!("network input must be [N, S_in, h, w], got {:?}", x.shape()));
        }
        let [_, s, h, w] = x.dims4();
        if s != self.config.s_in {
            return Err(shape_err!("network expects {} input slices, got {s}", self.config.s_in));
        }
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(shape_err!("in-plane size {h}x{w} must be a multiple of {m}"));
        }
        Ok(())
    }

    fn finish(&self, x: &Tensor<T>, z_last: &Tensor<T>) -> Result<Tensor<T>> {
        let (mut y, _) = self.tail.forward(z_last)?;
        if self.config.global_residual {
            y.add_assign(&lerp_channels(x, self.config.scale));
        }
        Ok(y)
    }

    /// Forward pass that keeps no caches.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let (mut z, _) = self.head.forward(x)?;
        for stage in self.schedule() {
            z = match stage {
                Stage::Block(i) => self.blocks[i].forward(&z)?.0,
                Stage::CrossView(k) => self.cross_views[k].forward(&z)?.0,
            };
        }
        self.finish(x, &z)
    }

    /// Inference pass recording every block's input, branch outputs and output.
    pub fn trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        self.check_input(x)?;
        let (head, _) = self.head.forward(x)?;
        let mut z = head.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for stage in self.schedule() {
            match stage {
                Stage::Block(i) => {
                    let (inter, intra, output) = match &self.blocks[i] {
                        Block::I2(b) => {
                            let o = b.forward_branches(&z)?;
                            (o.inter, o.intra, o.out)
                        }
                        Block::Plain(b) => (None, None, b.forward(&z)?.0),
                    };
                    blocks.push(BlockTrace { input: z, inter, intra, output: output.clone() });
                    z = output;
                }
                Stage::CrossView(k) => z = self.cross_views[k].forward(&z)?.0,
            }
        }
        Ok(Trace { head, blocks })
    }
}

impl<T: Scalar> Module<T> for I3Net<T> {
    type Cache = NetCache<T>;

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Self::Cache)> {
        self.check_input(x)?;
        let (z0, _) = self.head.forward(x)?;
        let mut stages = Vec::new();
        let mut z = z0.clone();
        for stage in self.schedule() {
            let (next, cache) = match stage {
                Stage::Block(i) => {
                    let (y, c) = self.blocks[i].forward(&z)?;
                    (y, StageCache::Block(c))
                }
                Stage::CrossView(k) => {
                    let (y, c) = self.cross_views[k].forward(&z)?;
                    (y, StageCache::CrossView(c))
                }
            };
            stages.push(cache);
            z = next;
        }
        let y = self.finish(x, &z)?;
        Ok((y, NetCache { x: x.clone(), z0, stages, z_last: z }))
    }

    fn backward(&self, cache: &Self::Cache, dy: &Tensor<T>, grads: Option<&mut Self>) -> Tensor<T> {
        let mut grads = grads;
        let mut dz = self.tail.backward(&cache.z_last, dy, grads.as_deref_mut().map(|g| &mut g.tail));
        for (stage, sc) in self.schedule().into_iter().zip(&cache.stages).rev() {
            dz = match (stage, sc) {
                (Stage::Block(i), StageCache::Block(c)) => {
                    self.blocks[i].backward(c, &dz, grads.as_deref_mut().map(|g| &mut g.blocks[i]))
                }
                (Stage::CrossView(k), StageCache::CrossView(c)) => {
                    self.cross_views[k].backward(c, &dz, grads.as_deref_mut().map(|g| &mut g.cross_views[k]))
                }
                _ => unreachable!("stage caches follow the schedule"),
            };
        }
        debug_assert_eq!(dz.shape(), cache.z0.shape());
        let mut dx = self.head.backward(&cache.x, &dz, grads.map(|g| &mut g.head));
        if self.config.global_residual {
            dx.add_assign(&lerp_channels_backward(dy, self.config.s_in, self.config.scale));
        }
        dx
    }
}

impl<T: Scalar> Parameters<T> for I3Net<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.head.visit(&join(prefix, "head"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (k, cv) in self.cross_views.iter().enumerate() {
            cv.visit(&join(prefix, &format!("cross_views.{k}")), f);
        }
        self.tail.visit(&join(prefix, "tail"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.head.visit_mut(&join(prefix, "head"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (k, cv) in self.cross_views.iter_mut().enumerate() {
            cv.visit_mut(&join(prefix, &format!("cross_views.{k}")), f);
        }
        self.tail.visit_mut(&join(prefix, "tail"), f);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nnops::gradcheck::{check_module_input, check_module_params};

    fn small(c: usize, n_blocks: usize, cvbs: Vec<usize>, p: usize, r: usize) -> ModelConfig {
        ModelConfig { channels: c, n_blocks, cvb_positions: cvbs, window: p, s_in: 4, scale: r, ..Default::default() }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = small(32, 4, vec![2], 8, 2);
        let net = I3Net::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(net.num_parameters(), 1_233_319);
        for (block, inter, intra) in [(BlockKind::I2, true, false), (BlockKind::Plain, true, true)] {
            let cfg = ModelConfig { block, inter, intra, ..small(8, 3, vec![1, 3], 4, 3) };
            let net = I3Net::<f32>::zeros(&cfg).unwrap();
            assert_eq!(net.num_parameters(), cfg.expected_parameter_count());
        }
    }

    #[test]
    fn head_contract() {
        let cfg = small(32, 1, vec![], 16, 2);
        let net = I3Net::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (z, _) = net.head.forward(&Tensor::zeros(&[2, 4, 64, 64])).unwrap();
        assert_eq!(z.shape(), &[2, 32, 64, 64]);
        let mut head = net.head.clone();
        head.bias.fill(0.0);
        assert!(head.forward(&Tensor::zeros(&[1, 4, 16, 16])).unwrap().0.data().iter().all(|&v| v == 0.0));
        assert!(net.infer(&Tensor::zeros(&[1, 3, 16, 16])).is_err());
    }

    #[test]
    fn output_slices_and_identity_at_init() {
        for r in [1, 2, 4, 6] {
            let cfg = small(8, 2, vec![1], 8, r);
            let net = I3Net::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(r as u64)).unwrap();
            let x = Tensor::from_fn(&[2, 4, 16, 16], |i| ((i * 37) % 100) as f32 / 100.0);
            let y = net.infer(&x).unwrap();
            assert_eq!(y.shape(), &[2, 3 * r + 1, 16, 16]);
            assert_eq!(y, lerp_channels(&x, r));
            if r == 1 {
                assert_eq!(y, x);
            }
        }
    }

    #[test]
    fn invalid_config_rejected_at_construction() {
        let cfg = ModelConfig { channels: 30, ..Default::default() };
        assert!(I3Net::<f32>::zeros(&cfg).is_err());
    }

    #[test]
    fn forward_and_infer_agree_and_are_deterministic() {
        let cfg = small(8, 2, vec![1], 8, 2);
        let mut net = I3Net::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        net.tail = Conv2d::init(8, 7, 3, 3, &mut ChaCha8Rng::seed_from_u64(6));
        let x = Tensor::from_fn(&[1, 4, 16, 16], |i| (i as f32 * 0.013).sin());
        let a = net.infer(&x).unwrap();
        assert_eq!(a, net.forward(&x).unwrap().0);
        assert_eq!(a, net.infer(&x).unwrap());
        let tr = net.trace(&x).unwrap();
        assert_eq!(tr.blocks.len(), 2);
        assert!(tr.blocks[0].intra.is_some());
    }

    #[test]
    fn full_network_gradients() {
        let cfg = small(8, 2, vec![1], 8, 2);
        let mut net = I3Net::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        net.tail = Conv2d::init(8, 7, 3, 3, &mut ChaCha8Rng::seed_from_u64(8));
        let rep = check_module_input(&net, &[1, 4, 16, 16], 9, 1e-3);
        assert!(rep.passed, "{rep:?}");
        let rep = check_module_params(&net, &[1, 4, 16, 16], 10, 1e-3, 3);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn cast_round_trip() {
        let cfg = small(8, 1, vec![1], 8, 2);
        let net = I3Net::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let back: I3Net<f32> = net.cast::<f64>().cast();
        let mut a = Vec::new();
        net.visit("", &mut |_, t| a.extend_from_slice(t.data()));
        let mut b = Vec::new();
        back.visit("", &mut |_, t| b.extend_from_slice(t.data()));
        assert_eq!(a, b);
    }
}
