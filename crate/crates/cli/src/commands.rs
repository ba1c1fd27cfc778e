//! One function per subcommand. Each writes its artifacts plus a resolved
//! configuration snapshot and returns the in-memory result.

use std::path::{Path, PathBuf};

use i3net_core::analysis::{
    bench_latency, energy_curve, feature_redundancy, hf_energy_ratio, hu_window, parseval_residual, receptive_probe,
    BenchReport, EnergyCurve, HfRatio, Redundancy, Saliency,
};
use i3net_core::eval::{evaluate, EvalOptions, EvalReport, InterpKind, Method};
use i3net_core::model::{load_checkpoint, save_checkpoint, synthesize_volume, Block, Checkpoint, I3Net, ModelConfig, SynthReport};
use i3net_core::train::{TrainState, Trainer};
use i3net_core::volformat::{
    gen_phantom, normalize_intensity, read_volume, write_volume, IntensityDomain, PhantomSpec, Volume, HU_HI, HU_LO,
};
use i3net_core::{Error, Result, Tensor};
use serde::Serialize;

use crate::runconfig::{fingerprint, PhantomSet, RunConfig};

pub const DETERMINISTIC_ENV: &str = "I3NET_DETERMINISTIC";

/// True when `I3NET_DETERMINISTIC` is set to anything but `0` or empty.
pub fn deterministic_env() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
}

/// Exit status for an error: 2 configuration or validation, 3 runtime or
/// numerical, 4 file access or malformed files.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Shape(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io { .. } | Error::Format { .. } | Error::Checkpoint(_) => 4,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_text(path, &s)
}

/// `<path>.config.json` beside an artifact.
pub fn snapshot_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// Raw HU volumes are mapped onto `[0, 1]` with the fixed CT range.
pub fn load_normalized(path: &Path) -> Result<Volume> {
    let v = read_volume(path)?;
    match v.domain() {
        IntensityDomain::RawHu => normalize_intensity(&v, HU_LO, HU_HI),
        IntensityDomain::NormalizedUnit => Ok(v),
    }
}

/// Every `*.rvl` in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, Volume)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rvl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Validation(format!("no .rvl volumes in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), load_normalized(p)?)))
        .collect()
}

pub fn phantom(seed: u64, size: [usize; 3]) -> Result<Volume> {
    let spec = PhantomSpec { size, ..PhantomSpec::with_seed(seed) };
    normalize_intensity(&gen_phantom(&spec)?, HU_LO, HU_HI)
}

/// Training and validation phantoms of a [`PhantomSet`].
pub fn phantom_sets(set: &PhantomSet) -> Result<(Vec<Volume>, Vec<Volume>)> {
    let train = (0..set.train as u64).map(|i| phantom(set.seed + i, set.size)).collect::<Result<_>>()?;
    let val = (0..set.val as u64).map(|i| phantom(set.seed + set.train as u64 + i, set.size)).collect::<Result<_>>()?;
    Ok((train, val))
}

pub fn gen_phantom_cmd(seed: u64, size: [usize; 3], out: &Path) -> Result<Volume> {
    let v = gen_phantom(&PhantomSpec { size, ..PhantomSpec::with_seed(seed) })?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_volume(&v, out)?;
    Ok(v)
}

/// Trains per `cfg` into `out_dir`: `config.json`, `last.i3ck`,
/// `best.i3ck` (when validation ran) and `history.json`.
pub fn train_cmd(cfg: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainState> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join("config.json"), &cfg.to_json())?;
    let (train, val) = match &cfg.data.train_dir {
        Some(dir) => {
            let train = load_dir(dir)?.into_iter().map(|(_, v)| v).collect();
            let val = match &cfg.data.val_dir {
                Some(d) => load_dir(d)?.into_iter().map(|(_, v)| v).collect(),
                None => Vec::new(),
            };
            (train, val)
        }
        None => phantom_sets(&cfg.data.phantoms)?,
    };
    let workers = if cfg.deterministic { 1 } else { cfg.workers };
    let trainer = match resume {
        Some(p) => {
            let t = Trainer::from_checkpoint(&load_checkpoint(p)?)?;
            if t.net.config() != &cfg.model || t.config() != &cfg.train {
                return Err(Error::Validation(format!("{} was trained with a different configuration", p.display())));
            }
            t
        }
        None => Trainer::new(I3Net::seeded(&cfg.model, cfg.train.seed)?, &cfg.train, train.len())?,
    };
    let outcome = trainer.with_workers(workers).run(&train, &val, Some(out_dir))?;
    write_json(&out_dir.join("history.json"), &outcome.state)?;
    Ok(outcome.state)
}

pub fn load_net(path: &Path) -> Result<I3Net<f32>> {
    load_checkpoint(path)?.to_model()
}

fn check_scale(net: &I3Net<f32>, scale: usize) -> Result<()> {
    if net.config().scale != scale {
        return Err(Error::Validation(format!(
            "checkpoint was trained for scale {} but --scale is {scale}",
            net.config().scale
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalSnapshot<'a> {
    checkpoint: Option<&'a Path>,
    checkpoint_sha256: Option<String>,
    model: Option<&'a ModelConfig>,
    data: &'a Path,
    scale: usize,
    baselines: Vec<&'static str>,
    deterministic: bool,
}

/// Evaluates the checkpoint (named `i3net`) and the requested baselines on
/// every volume in `data`. Writes the JSON report, its config snapshot and
/// optionally the CSV table.
pub fn eval_cmd(
    checkpoint: Option<&Path>,
    data: &Path,
    scale: usize,
    baselines: &[InterpKind],
    report: &Path,
    csv: Option<&Path>,
    deterministic: bool,
) -> Result<EvalReport> {
    let net = checkpoint.map(load_net).transpose()?;
    if let Some(n) = &net {
        check_scale(n, scale)?;
    }
    let vols = load_dir(data)?;
    let snapshot = EvalSnapshot {
        checkpoint,
        checkpoint_sha256: checkpoint
            .map(|p| std::fs::read(p).map(|b| fingerprint_bytes(&b)).map_err(|e| Error::io(p, e)))
            .transpose()?,
        model: net.as_ref().map(|n| n.config()),
        data,
        scale,
        baselines: baselines.iter().map(|k| k.name()).collect(),
        deterministic,
    };
    let snap_json = serde_json::to_string_pretty(&snapshot).expect("serializable") + "\n";
    // Paths are recorded but not fingerprinted; the checkpoint is identified by its hash.
    let keyed = EvalSnapshot { checkpoint: None, data: Path::new(""), ..snapshot };
    let key = serde_json::to_string(&keyed).expect("serializable");
    let mut methods = Vec::new();
    if let Some(n) = &net {
        methods.push(Method::new("i3net", move |lr: &Volume| Ok(synthesize_volume(lr, n)?.volume)));
    }
    methods.extend(baselines.iter().map(|&k| Method::baseline(scale, k)));
    let opts = EvalOptions { deterministic, config_fingerprint: fingerprint(&key), ..EvalOptions::default() };
    let rep = evaluate(&methods, &vols, scale, &opts)?;
    write_text(report, &rep.to_json())?;
    write_text(&snapshot_path(report), &snap_json)?;
    if let Some(c) = csv {
        write_text(c, &rep.to_csv())?;
    }
    Ok(rep)
}

fn fingerprint_bytes(b: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(b))
}

/// Synthesizes `input` with the checkpoint. Raw HU input is normalized for
/// the network and mapped back to HU on output.
pub fn synth_cmd(checkpoint: &Path, input: &Path, scale: usize, out: &Path) -> Result<SynthReport> {
    let net = load_net(checkpoint)?;
    check_scale(&net, scale)?;
    let raw = read_volume(input)?;
    let lr = match raw.domain() {
        IntensityDomain::RawHu => normalize_intensity(&raw, HU_LO, HU_HI)?,
        IntensityDomain::NormalizedUnit => raw.clone(),
    };
    let syn = synthesize_volume(&lr, &net)?;
    let vol = match raw.domain() {
        IntensityDomain::RawHu => {
            let data = syn.volume.data().iter().map(|&v| (v as f64 * (HU_HI - HU_LO) + HU_LO) as f32).collect();
            Volume::new(syn.volume.dims(), data, syn.volume.spacing(), IntensityDomain::RawHu)?
        }
        IntensityDomain::NormalizedUnit => syn.volume,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_volume(&vol, out)?;
    #[derive(Serialize)]
    struct Snap<'a> {
        checkpoint: &'a Path,
        input: &'a Path,
        scale: usize,
        model: &'a ModelConfig,
        report: &'a SynthReport,
    }
    write_json(
        &snapshot_path(out),
        &Snap { checkpoint, input, scale, model: net.config(), report: &syn.report },
    )?;
    Ok(syn.report)
}

/// The network input for probes: the first `S_in` slices of `v`, centre
/// cropped to the largest size the network accepts.
pub fn probe_input(net: &I3Net<f32>, v: &Volume) -> Result<Tensor<f32>> {
    let cfg = net.config();
    let m = cfg.spatial_multiple();
    let [s, h, w] = v.dims();
    if s < cfg.s_in {
        return Err(Error::Validation(format!("probe volume needs at least {} slices, has {s}", cfg.s_in)));
    }
    let (ch, cw) = (h / m * m, w / m * m);
    if ch == 0 || cw == 0 {
        return Err(Error::Validation(format!("probe volume {h}x{w} is smaller than {m}")));
    }
    let crop = v.slab(0, cfg.s_in)?.center_crop(ch, cw)?;
    Tensor::from_vec(&[1, cfg.s_in, ch, cw], crop.into_data())
}

pub const DEFAULT_RHOS: [f64; 20] = [
    0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0,
];

#[derive(Clone, Debug, Serialize)]
pub struct BlockEnergy {
    pub block: usize,
    pub input: HfRatio,
    pub inter: Option<HfRatio>,
    pub intra: Option<HfRatio>,
    pub output: HfRatio,
    pub output_curve: EnergyCurve,
    pub parseval_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FreqEnergyReport {
    pub rho: f64,
    pub input_shape: Vec<usize>,
    pub blocks: Vec<BlockEnergy>,
}

/// High-frequency energy at every block's input, branch outputs and output.
pub fn freq_energy(net: &I3Net<f32>, x: &Tensor<f32>, rho: f64, rhos: &[f64]) -> Result<FreqEnergyReport> {
    let trace = net.trace(x)?;
    let mut blocks = Vec::with_capacity(trace.blocks.len());
    for (i, b) in trace.blocks.iter().enumerate() {
        blocks.push(BlockEnergy {
            block: i + 1,
            input: hf_energy_ratio(&b.input, rho)?,
            inter: b.inter.as_ref().map(|t| hf_energy_ratio(t, rho)).transpose()?,
            intra: b.intra.as_ref().map(|t| hf_energy_ratio(t, rho)).transpose()?,
            output: hf_energy_ratio(&b.output, rho)?,
            output_curve: energy_curve(&b.output, rhos)?,
            parseval_residual: parseval_residual(&b.output),
        });
    }
    Ok(FreqEnergyReport { rho, input_shape: x.shape().to_vec(), blocks })
}

#[derive(Clone, Debug, Serialize)]
pub struct RedundancyPoint {
    pub depth: usize,
    pub redundancy: Redundancy,
}

/// Channel redundancy of the head output (depth 0) and every block output.
pub fn redundancy_curve(net: &I3Net<f32>, x: &Tensor<f32>) -> Result<Vec<RedundancyPoint>> {
    let trace = net.trace(x)?;
    let mut out = vec![RedundancyPoint { depth: 0, redundancy: feature_redundancy(&trace.head)? }];
    for (i, b) in trace.blocks.iter().enumerate() {
        out.push(RedundancyPoint { depth: i + 1, redundancy: feature_redundancy(&b.output)? });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    /// The inter-slice branch of the block.
    Inter,
    /// The intra-slice branch of the block.
    Intra,
    /// The whole block, identity path included.
    Block,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReceptiveReport {
    pub target: ProbeTarget,
    pub block: usize,
    pub size: usize,
    pub support: usize,
    pub support_extent: (usize, usize),
    pub saliency: Saliency,
}

/// Receptive field of a component of block `block` (1-based) on a
/// `size×size` plane.
pub fn receptive_cmd(net: &I3Net<f32>, target: ProbeTarget, block: usize, size: usize) -> Result<ReceptiveReport> {
    let net = net.cast::<f64>();
    let c = net.config().channels;
    let b = net
        .blocks
        .get(block.wrapping_sub(1))
        .ok_or_else(|| Error::Validation(format!("block {block} is out of range 1..={}", net.blocks.len())))?;
    let shape = [1, c, size, size];
    let center = (size / 2, size / 2);
    let missing = |what: &str| Error::Validation(format!("block {block} has no {what} branch"));
    let saliency = match (target, b) {
        (ProbeTarget::Inter, Block::I2(b)) => receptive_probe(b.inter.as_ref().ok_or_else(|| missing("inter"))?, shape, center, 0)?,
        (ProbeTarget::Intra, Block::I2(b)) => receptive_probe(b.intra.as_ref().ok_or_else(|| missing("intra"))?, shape, center, 0)?,
        (ProbeTarget::Block, b) => receptive_probe(b, shape, center, 0)?,
        (_, Block::Plain(_)) => return Err(missing("inter/intra")),
    };
    Ok(ReceptiveReport {
        target,
        block,
        size,
        support: saliency.support(),
        support_extent: saliency.support_extent(),
        saliency,
    })
}

/// Writes `slice_NNN.pgm` for every slice of the windowed raw volume.
pub fn hu_window_cmd(input: &Path, lo: f64, hi: f64, out_dir: &Path) -> Result<usize> {
    let v = read_volume(input)?;
    let img = hu_window(&v, lo, hi)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for s in 0..img.dims[0] {
        let p = out_dir.join(format!("slice_{s:03}.pgm"));
        std::fs::write(&p, img.slice_pgm(s)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(img.dims[0])
}

/// Benchmarks the checkpoint, or a freshly initialised default-width
/// network at `scale` when no checkpoint is given.
pub fn bench_cmd(
    checkpoint: Option<&Path>,
    shape: [usize; 3],
    scale: usize,
    warmup: usize,
    repeats: usize,
) -> Result<BenchReport> {
    let net = match checkpoint {
        Some(p) => load_net(p)?,
        None => I3Net::seeded(&ModelConfig { scale, ..ModelConfig::default() }, 0)?,
    };
    check_scale(&net, scale)?;
    bench_latency(&net, shape, warmup, repeats)
}

/// Saves `net` as a weights-only checkpoint.
pub fn save_weights(net: &I3Net<f32>, path: &Path) -> Result<()> {
    save_checkpoint(&Checkpoint::from_model(net), path)
}
