use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamHyper};
use super::config::TrainConfig;
use super::{l1_loss, l1_loss_grad, lr_at};
use crate::error::{validation_err, Error, Result};
use crate::eval::psnr;
use crate::model::{save_checkpoint, synthesize_volume, Checkpoint, I3Net, OPTIM_PREFIX};
use crate::nnops::{Module, Parameters};
use crate::tensor::Tensor;
use crate::volformat::{downsample_axial, sample_patch, IntensityDomain, PatchPair, Volume};

/// Serializable position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |what: &str| Error::Checkpoint(format!("invalid rng {what} in train state"));
        let seed: [u8; 32] = hex::decode(&self.seed).ok().and_then(|v| v.try_into().ok()).ok_or_else(|| bad("seed"))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("word_pos"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub epoch: usize,
    pub step: usize,
    /// Mean PSNR over finite volumes; `None` when every volume was exact.
    pub psnr: Option<f64>,
    pub infinite: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub epoch: usize,
    pub total_steps: usize,
    pub rng: RngState,
    pub adam: AdamHyper,
    pub best_val_psnr: Option<f64>,
    pub best_epoch: Option<usize>,
    pub steps: Vec<StepRecord>,
    pub val: Vec<ValRecord>,
    pub config: TrainConfig,
}

pub struct TrainOutcome {
    pub net: I3Net<f32>,
    /// Weights with the best validation PSNR, if validation ran.
    pub best: Option<I3Net<f32>>,
    pub state: TrainState,
}

/// Owns the network, optimizer and data-order RNG for one run.
pub struct Trainer {
    pub net: I3Net<f32>,
    pub state: TrainState,
    opt: Adam,
    rng: ChaCha8Rng,
    grads: I3Net<f32>,
    best: Option<I3Net<f32>>,
    workers: usize,
}

impl Trainer {
    pub fn new(net: I3Net<f32>, cfg: &TrainConfig, n_train_volumes: usize) -> Result<Self> {
        cfg.validate()?;
        if n_train_volumes == 0 {
            return Err(validation_err!("training set is empty"));
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let opt = Adam::new(&net, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut grads = net.clone();
        grads.zero_();
        let state = TrainState {
            step: 0,
            epoch: 0,
            total_steps: cfg.epochs * cfg.steps_per_epoch(n_train_volumes),
            rng: RngState::capture(&rng),
            adam: opt.hyper(),
            best_val_psnr: None,
            best_epoch: None,
            steps: Vec::new(),
            val: Vec::new(),
            config: cfg.clone(),
        };
        Ok(Trainer { net, state, opt, rng, grads, best: None, workers: 1 })
    }

    /// Patch sampling threads; results do not depend on this.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.state.config.epochs
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_model(&self.net);
        let mut names = Vec::new();
        self.net.visit("", &mut |n, _| names.push(n.to_string()));
        for (name, (m, v)) in names.iter().zip(self.opt.m.iter().zip(&self.opt.v)) {
            ck.tensors.push((format!("{OPTIM_PREFIX}m.{name}"), m.clone()));
            ck.tensors.push((format!("{OPTIM_PREFIX}v.{name}"), v.clone()));
        }
        let mut state = self.state.clone();
        state.rng = RngState::capture(&self.rng);
        state.adam = self.opt.hyper();
        ck.train_state = Some(serde_json::to_string(&state).map_err(|e| Error::Checkpoint(e.to_string()))?);
        Ok(ck)
    }

    /// Restores a run exactly where [`to_checkpoint`](Self::to_checkpoint)
    /// left it.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net = ck.to_model()?;
        let json = ck.train_state.as_deref().ok_or_else(|| Error::Checkpoint("missing entry `train_state`".into()))?;
        let state: TrainState =
            serde_json::from_str(json).map_err(|e| Error::Checkpoint(format!("invalid entry `train_state`: {e}")))?;
        let mut opt = Adam::new(&net, state.adam.beta1, state.adam.beta2, state.adam.eps);
        opt.t = state.adam.t;
        let mut problem = None;
        let mut i = 0;
        net.visit("", &mut |name, t| {
            for (kind, dst) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                let key = format!("{OPTIM_PREFIX}{kind}.{name}");
                match ck.tensor(&key) {
                    Some(src) if src.shape() == t.shape() => *dst = src.clone(),
                    Some(_) => problem = problem.take().or(Some(format!("entry `{key}` has the wrong shape"))),
                    None => problem = problem.take().or(Some(format!("missing entry `{key}`"))),
                }
            }
            i += 1;
        });
        if let Some(p) = problem {
            return Err(Error::Checkpoint(p));
        }
        let rng = state.rng.restore()?;
        let mut grads = net.clone();
        grads.zero_();
        Ok(Trainer { net, state, opt, rng, grads, best: None, workers: 1 })
    }

    fn assemble(patches: &[PatchPair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let b = patches.len();
        let (ls, hs) = (patches[0].lr.shape().to_vec(), patches[0].hr.shape().to_vec());
        let mut lr = Vec::with_capacity(b * patches[0].lr.len());
        let mut hr = Vec::with_capacity(b * patches[0].hr.len());
        for p in patches {
            lr.extend_from_slice(p.lr.data());
            hr.extend_from_slice(p.hr.data());
        }
        Ok((Tensor::from_vec(&[b, ls[0], ls[1], ls[2]], lr)?, Tensor::from_vec(&[b, hs[0], hs[1], hs[2]], hr)?))
    }

    /// One optimizer step on a batch.
    pub fn step_batch(&mut self, patches: &[PatchPair]) -> Result<StepRecord> {
        let (x, target) = Self::assemble(patches)?;
        let lr = lr_at(self.state.step, self.state.total_steps, self.state.config.lr0);
        let (y, cache) = self.net.forward(&x)?;
        let loss = l1_loss(&y, &target)?;
        self.grads.zero_();
        let dy = l1_loss_grad(&y, &target);
        self.net.backward(&cache, &dy, Some(&mut self.grads));
        drop(cache);
        let mut sq = 0.0;
        self.grads.visit("", &mut |_, g| sq += g.sq_norm());
        let grad_norm = sq.sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite training signal at step {} (epoch {}): loss {loss}, lr {lr:e}, grad-norm {grad_norm}",
                self.state.step, self.state.epoch
            )));
        }
        if let Some(clip) = self.state.config.grad_clip {
            if grad_norm > clip {
                let s = (clip / grad_norm) as f32;
                self.grads.visit_mut("", &mut |_, g| g.scale(s));
            }
        }
        self.opt.step(&mut self.net, &self.grads, lr);
        if cfg!(debug_assertions) {
            let mut finite = true;
            self.net.visit("", &mut |_, p| finite &= p.all_finite());
            assert!(finite, "non-finite parameter after step {}", self.state.step);
        }
        let rec = StepRecord { step: self.state.step, epoch: self.state.epoch, loss, lr, grad_norm };
        self.state.step += 1;
        self.state.steps.push(rec.clone());
        Ok(rec)
    }

    /// Samples this epoch's patches. Job `i` always uses stream `i` of the
    /// epoch seed, so the batch order is independent of the worker count.
    fn sample_epoch(&mut self, train: &[Volume]) -> Result<Vec<PatchPair>> {
        let epoch_seed = self.rng.next_u64();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let jobs: Vec<usize> = (0..self.state.config.patches_per_volume).flat_map(|_| order.iter().copied()).collect();
        let cfg = self.net.config();
        let (r, s_in, crop) = (cfg.scale, cfg.s_in, self.state.config.crop);
        let n_jobs = jobs.len();
        let jobs = &jobs;
        let sample = move |i: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
            rng.set_stream(i as u64);
            sample_patch(&train[jobs[i]], r, s_in, crop, &mut rng)
        };
        if self.workers == 1 || n_jobs < 2 {
            return (0..n_jobs).map(sample).collect();
        }
        let chunk = n_jobs.div_ceil(self.workers);
        let parts: Vec<Result<Vec<PatchPair>>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..n_jobs)
                .step_by(chunk)
                .map(|lo| {
                    let sample = &sample;
                    s.spawn(move || (lo..(lo + chunk).min(n_jobs)).map(sample).collect())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sampler thread panicked")).collect()
        });
        let mut out = Vec::with_capacity(n_jobs);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn run_epoch(&mut self, train: &[Volume]) -> Result<()> {
        if let Some(i) = train.iter().position(|v| v.domain() != IntensityDomain::NormalizedUnit) {
            return Err(validation_err!("training volume {i} is not normalized"));
        }
        let patches = self.sample_epoch(train)?;
        for batch in patches.chunks(self.state.config.batch_size) {
            self.step_batch(batch)?;
        }
        self.state.epoch += 1;
        Ok(())
    }

    /// Mean PSNR of whole-volume synthesis on decimated `val` volumes.
    pub fn validate(&self, val: &[Volume]) -> Result<ValRecord> {
        let (mut sum, mut n, mut infinite) = (0.0, 0usize, 0usize);
        for v in val {
            let (lr, hr) = downsample_axial(v, self.net.config().scale)?;
            let out = synthesize_volume(&lr, &self.net)?;
            let p = psnr(&out.volume, &hr)?;
            if p.is_finite() {
                sum += p;
                n += 1;
            } else {
                infinite += 1;
            }
        }
        let psnr = (n > 0).then(|| sum / n as f64);
        Ok(ValRecord { epoch: self.state.epoch, step: self.state.step, psnr, infinite })
    }

    /// Trains until the configured epoch count, validating and checkpointing
    /// at the configured intervals. Checkpoints go to `out_dir/last.i3ck`
    /// and `out_dir/best.i3ck`.
    pub fn run(mut self, train: &[Volume], val: &[Volume], out_dir: Option<&Path>) -> Result<TrainOutcome> {
        while !self.finished() {
            self.run_epoch(train)?;
            let cfg = &self.state.config;
            let (epoch, last) = (self.state.epoch, self.state.epoch == cfg.epochs);
            if !val.is_empty() && cfg.val_interval > 0 && (epoch % cfg.val_interval == 0 || last) {
                let rec = self.validate(val)?;
                let score = rec.psnr.unwrap_or(f64::INFINITY);
                if self.state.best_val_psnr.is_none_or(|b| score > b) {
                    self.state.best_val_psnr = Some(score);
                    self.state.best_epoch = Some(epoch);
                    self.best = Some(self.net.clone());
                    if let Some(dir) = out_dir {
                        save_checkpoint(&Checkpoint::from_model(&self.net), &dir.join("best.i3ck"))?;
                    }
                }
                self.state.val.push(rec);
            }
            let interval = self.state.config.checkpoint_interval;
            if let Some(dir) = out_dir {
                if last || (interval > 0 && epoch % interval == 0) {
                    save_checkpoint(&self.to_checkpoint()?, &dir.join("last.i3ck"))?;
                }
            }
        }
        let mut state = self.state;
        state.rng = RngState::capture(&self.rng);
        state.adam = self.opt.hyper();
        Ok(TrainOutcome { net: self.net, best: self.best, state })
    }
}

/// Trains `net` on `train`, validating on `val`; no files are written.
pub fn train_loop(net: I3Net<f32>, train: &[Volume], val: &[Volume], cfg: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(net, cfg, train.len())?.run(train, val, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{decode_checkpoint, encode_checkpoint, ModelConfig};
    use crate::volformat::{gen_phantom, normalize_intensity, PhantomSpec, HU_HI, HU_LO};

    fn tiny_model() -> I3Net<f32> {
        let cfg = ModelConfig { channels: 8, n_blocks: 1, cvb_positions: vec![1], window: 8, ..Default::default() };
        I3Net::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn phantoms(n: usize) -> Vec<Volume> {
        (0..n)
            .map(|i| {
                let spec = PhantomSpec { size: [9, 16, 16], n_ellipsoids: 3, n_tubes: 2, ..PhantomSpec::with_seed(i as u64) };
                normalize_intensity(&gen_phantom(&spec).unwrap(), HU_LO, HU_HI).unwrap()
            })
            .collect()
    }

    fn cfg(epochs: usize, batch: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: batch, crop: 16, val_interval: 0, ..Default::default() }
    }

    fn losses(out: &TrainOutcome) -> Vec<u64> {
        out.state.steps.iter().map(|s| s.loss.to_bits()).collect()
    }

    #[test]
    fn one_volume_one_epoch_batch_one_is_one_step() {
        let out = train_loop(tiny_model(), &phantoms(1), &[], &cfg(1, 1)).unwrap();
        assert_eq!(out.state.step, 1);
        assert_eq!(out.state.total_steps, 1);
        assert_eq!(cfg(3, 4).steps_per_epoch(10), 3);
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible_and_worker_independent() {
        let data = phantoms(5);
        let a = train_loop(tiny_model(), &data, &[], &cfg(2, 2)).unwrap();
        let b = train_loop(tiny_model(), &data, &[], &cfg(2, 2)).unwrap();
        assert_eq!(losses(&a), losses(&b));
        let c = Trainer::new(tiny_model(), &cfg(2, 2), 5).unwrap().with_workers(3).run(&data, &[], None).unwrap();
        assert_eq!(losses(&a), losses(&c));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = phantoms(3);
        let full = train_loop(tiny_model(), &data, &[], &cfg(4, 2)).unwrap();

        let mut t = Trainer::new(tiny_model(), &cfg(4, 2), 3).unwrap();
        t.run_epoch(&data).unwrap();
        t.run_epoch(&data).unwrap();
        let bytes = encode_checkpoint(&t.to_checkpoint().unwrap()).unwrap();
        drop(t);
        let resumed = Trainer::from_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap().run(&data, &[], None).unwrap();
        assert_eq!(losses(&full), losses(&resumed));
        let bits = |n: &I3Net<f32>| {
            let mut v = Vec::new();
            n.visit("", &mut |_, t| v.extend(t.data().iter().map(|x| x.to_bits())));
            v
        };
        assert_eq!(bits(&full.net), bits(&resumed.net));
    }

    #[test]
    fn resume_without_state_is_rejected() {
        let ck = Checkpoint::from_model(&tiny_model());
        let err = Trainer::from_checkpoint(&ck).err().unwrap().to_string();
        assert!(err.contains("train_state"), "{err}");
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let mut net = tiny_model();
        net.tail.bias.data_mut()[0] = f32::NAN;
        let err = train_loop(net, &phantoms(1), &[], &cfg(1, 1)).err().unwrap();
        let msg = err.to_string();
        assert!(matches!(err, Error::Numerical(_)));
        assert!(msg.contains("step 0") && msg.contains("lr") && msg.contains("grad-norm"), "{msg}");
    }

    #[test]
    fn validation_tracks_best() {
        let data = phantoms(2);
        let c = TrainConfig { val_interval: 1, ..cfg(2, 2) };
        let out = train_loop(tiny_model(), &data[..1], &data[1..], &c).unwrap();
        assert_eq!(out.state.val.len(), 2);
        assert!(out.best.is_some());
        assert!(out.state.best_val_psnr.is_some());
    }

    #[test]
    fn overfit_loss_falls_for_three_seeds() {
        let spec = PhantomSpec { size: [7, 16, 16], ..PhantomSpec::with_seed(4) };
        let vol = normalize_intensity(&gen_phantom(&spec).unwrap(), HU_LO, HU_HI).unwrap();
        let median = |xs: &[StepRecord]| {
            let mut v: Vec<f64> = xs.iter().map(|s| s.loss).collect();
            v.sort_by(f64::total_cmp);
            (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2.0
        };
        for seed in 0..3 {
            let model_cfg = ModelConfig { channels: 8, n_blocks: 1, cvb_positions: vec![1], window: 8, ..Default::default() };
            let net = I3Net::seeded(&model_cfg, seed).unwrap();
            let c = TrainConfig { seed, lr0: 1e-3, ..cfg(400, 1) };
            let out = train_loop(net, std::slice::from_ref(&vol), &[], &c).unwrap();
            let steps = &out.state.steps;
            let (first, last) = (median(&steps[..100]), median(&steps[steps.len() - 100..]));
            assert!(last < first, "seed {seed}: median loss {first} -> {last}");
        }
    }
}
