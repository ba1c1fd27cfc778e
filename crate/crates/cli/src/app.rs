//! Argument parsing and dispatch for the `i3net` binary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crate::commands::{self, ProbeTarget, DEFAULT_RHOS};
use crate::runconfig::{parse_config, parse_override};
use i3net_core::eval::InterpKind;
use i3net_core::Result;

#[derive(Parser)]
#[command(name = "i3net", version, about = "Axial slice interpolation for anisotropic volumes")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write a synthetic CT phantom in raw HU.
    GenPhantom {
        /// Phantom seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Volume size as SxHxW.
        #[arg(long, value_parser = parse_shape, default_value = "19x64x64")]
        size: [usize; 3],
        /// Output volume (.rvl).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network from a JSON run configuration.
    Train {
        /// Run configuration (JSON); omitted means all defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Deterministic mode (also enabled by I3NET_DETERMINISTIC=1).
        #[arg(long)]
        deterministic: bool,
        /// Output directory for checkpoints, history and the config snapshot.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Patch-sampling threads; overrides `workers`.
        #[arg(long)]
        workers: Option<usize>,
        /// Resume from a `last.i3ck` checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override any config key, e.g. `--set train.lr0=1e-3`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Score a checkpoint and classical baselines on a directory of volumes.
    Eval {
        /// Network checkpoint; omit to score baselines only.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of ground-truth .rvl volumes.
        #[arg(long)]
        data: PathBuf,
        /// Axial decimation factor R.
        #[arg(long)]
        scale: usize,
        /// Report path (JSON).
        #[arg(long)]
        report: PathBuf,
        /// Comma-separated baselines: nearest, linear, cubic.
        #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
        baselines: Vec<InterpKind>,
        /// Also write the Method/PSNR/SSIM table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Omit timestamp and latency so reports are reproducible.
        #[arg(long)]
        deterministic: bool,
    },
    /// Upsample one volume along the axial axis.
    Synth {
        /// Network checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input volume (.rvl).
        #[arg(long = "in")]
        input: PathBuf,
        /// Upsampling factor R; must match the checkpoint.
        #[arg(long)]
        scale: usize,
        /// Output volume (.rvl).
        #[arg(long)]
        out: PathBuf,
    },
    /// Diagnostic probes.
    Analyze {
        #[command(subcommand)]
        probe: Probe,
    },
    /// Whole-volume inference latency.
    Bench {
        /// Network checkpoint; omit to time a freshly initialised default network.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input shape as SxHxW.
        #[arg(long, value_parser = parse_shape, default_value = "4x256x256")]
        shape: [usize; 3],
        /// Upsampling factor R; must match the checkpoint.
        #[arg(long, default_value_t = 6)]
        scale: usize,
        /// Untimed runs before measuring.
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Timed runs; the median is reported.
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
pub struct ProbeCommon {
    /// Network checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
pub enum Probe {
    /// High-frequency DCT energy at every block.
    FreqEnergy {
        #[command(flatten)]
        common: ProbeCommon,
        /// Input volume; its first S_in slices are traced.
        #[arg(long = "in")]
        input: PathBuf,
        /// Ratio used for the per-branch comparison.
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
    },
    /// Channel redundancy versus depth.
    Redundancy {
        #[command(flatten)]
        common: ProbeCommon,
        /// Input volume; its first S_in slices are traced.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Gradient receptive field of one block component.
    Receptive {
        #[command(flatten)]
        common: ProbeCommon,
        /// Component to probe.
        #[arg(long, value_enum, default_value_t = ProbeTarget::Intra)]
        target: ProbeTarget,
        /// 1-based block index.
        #[arg(long, default_value_t = 1)]
        block: usize,
        /// Plane size of the probe input.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Render a raw HU volume through a display window as PGM slices.
    HuWindow {
        /// Accepted for symmetry with the other probes; unused.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Raw HU volume (.rvl).
        #[arg(long = "in")]
        input: PathBuf,
        /// Window lower bound in HU.
        #[arg(long, default_value_t = -125.0, allow_negative_numbers = true)]
        lo: f64,
        /// Window upper bound in HU.
        #[arg(long, default_value_t = 275.0, allow_negative_numbers = true)]
        hi: f64,
        /// Output directory for slice_NNN.pgm files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_shape(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    let dims: Vec<usize> = parts.iter().filter_map(|p| p.parse().ok()).collect();
    match dims[..] {
        [a, b, c] if parts.len() == 3 && a > 0 && b > 0 && c > 0 => Ok([a, b, c]),
        _ => Err(format!("expected SxHxW with positive integers, got `{s}`")),
    }
}

fn parse_kind(s: &str) -> std::result::Result<InterpKind, String> {
    InterpKind::parse(s).ok_or_else(|| format!("unknown baseline `{s}` (nearest, linear, cubic)"))
}

pub fn run(cli: Cli) -> Result<()> {
    let det_env = commands::deterministic_env();
    match cli.command {
        Command::GenPhantom { seed, size, out } => {
            commands::gen_phantom_cmd(seed, size, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train { config, seed, deterministic, out, workers, resume, set } => {
            let mut overrides = set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
            if let Some(s) = seed {
                overrides.push(("train.seed".into(), s.into()));
            }
            if let Some(w) = workers {
                overrides.push(("workers".into(), w.into()));
            }
            if deterministic || det_env {
                overrides.push(("deterministic".into(), true.into()));
            }
            let cfg = parse_config(config.as_deref(), &overrides)?;
            let state = commands::train_cmd(&cfg, &out, resume.as_deref())?;
            let last = state.steps.last().map(|s| s.loss).unwrap_or(f64::NAN);
            println!("trained {} steps; final loss {last:.6}; outputs in {}", state.step, out.display());
            if let Some(p) = state.best_val_psnr {
                println!("best validation PSNR {p:.3} dB at epoch {}", state.best_epoch.unwrap_or(0));
            }
        }
        Command::Eval { checkpoint, data, scale, report, baselines, csv, deterministic } => {
            let rep = commands::eval_cmd(
                checkpoint.as_deref(),
                &data,
                scale,
                &baselines,
                &report,
                csv.as_deref(),
                deterministic || det_env,
            )?;
            print!("{}", rep.to_csv());
        }
        Command::Synth { checkpoint, input, scale, out } => {
            let r = commands::synth_cmd(&checkpoint, &input, scale, &out)?;
            println!("wrote {} ({} windows)", out.display(), r.windows);
        }
        Command::Analyze { probe } => match probe {
            Probe::FreqEnergy { common, input, rho } => {
                let net = commands::load_net(&common.checkpoint)?;
                let x = commands::probe_input(&net, &commands::load_normalized(&input)?)?;
                let rep = commands::freq_energy(&net, &x, rho, &DEFAULT_RHOS)?;
                commands::write_json(&common.out, &rep)?;
                if let Some(last) = rep.blocks.last() {
                    let mut csv = common.out.clone();
                    csv.set_extension("csv");
                    commands::write_text(&csv, &last.output_curve.to_csv())?;
                }
                println!("wrote {}", common.out.display());
            }
            Probe::Redundancy { common, input } => {
                let net = commands::load_net(&common.checkpoint)?;
                let x = commands::probe_input(&net, &commands::load_normalized(&input)?)?;
                let curve = commands::redundancy_curve(&net, &x)?;
                commands::write_json(&common.out, &curve)?;
                let mut csv = String::from("depth,redundancy\n");
                for p in &curve {
                    let v = p.redundancy.value.map(|v| v.to_string()).unwrap_or_default();
                    csv.push_str(&format!("{},{v}\n", p.depth));
                }
                let mut path = common.out.clone();
                path.set_extension("csv");
                commands::write_text(&path, &csv)?;
                println!("wrote {}", common.out.display());
            }
            Probe::Receptive { common, target, block, size } => {
                let net = commands::load_net(&common.checkpoint)?;
                let rep = commands::receptive_cmd(&net, target, block, size)?;
                commands::write_json(&common.out, &rep)?;
                println!("support {} pixels, extent {:?}", rep.support, rep.support_extent);
            }
            Probe::HuWindow { checkpoint: _, input, lo, hi, out } => {
                let n = commands::hu_window_cmd(&input, lo, hi, &out)?;
                println!("wrote {n} slices to {}", out.display());
            }
        },
        Command::Bench { checkpoint, shape, scale, warmup, repeats, out } => {
            let rep = commands::bench_cmd(checkpoint.as_deref(), shape, scale, warmup, repeats)?;
            if let Some(p) = out {
                commands::write_json(&p, &rep)?;
            }
            println!(
                "{}x{}x{} -> {}x{}x{} (R={}): median {:.2} ms over {} runs",
                rep.input_shape[0],
                rep.input_shape[1],
                rep.input_shape[2],
                rep.output_shape[0],
                rep.output_shape[1],
                rep.output_shape[2],
                rep.scale,
                rep.median_ms,
                rep.runs_ms.len()
            );
        }
    }
    Ok(())
}

/// Parses `std::env::args` and runs; the process exit status follows
/// [`commands::exit_code`].
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
