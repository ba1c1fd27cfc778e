use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Result};
use crate::eval::median;
use crate::model::{synthesize_volume, I3Net};
use crate::volformat::{IntensityDomain, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub cpu_model: Option<String>,
}

impl Hardware {
    pub fn detect() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        });
        Hardware {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            cpu_model,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// `[S, H, W]` of the low-resolution input.
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
    pub scale: usize,
    pub warmup: usize,
    pub runs_ms: Vec<f64>,
    pub median_ms: f64,
    pub hardware: Hardware,
    pub note: String,
}

pub const BENCH_WARMUP: usize = 3;
pub const BENCH_REPEATS: usize = 10;

/// Median wall-clock of `repeats` whole-volume syntheses after `warmup`
/// untimed ones, on a seeded random normalized volume of `shape`.
pub fn bench_latency(net: &I3Net<f32>, shape: [usize; 3], warmup: usize, repeats: usize) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(validation_err!("bench needs at least one timed run"));
    }
    let [s, h, w] = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data = (0..s * h * w).map(|_| rng.random::<f32>()).collect();
    let v = Volume::new(shape, data, [1.0; 3], IntensityDomain::NormalizedUnit)?;
    let mut output_shape = [0; 3];
    for _ in 0..warmup {
        output_shape = synthesize_volume(&v, net)?.volume.dims();
    }
    let mut runs_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        let out = synthesize_volume(&v, net)?;
        runs_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        output_shape = out.volume.dims();
    }
    Ok(BenchReport {
        input_shape: shape,
        output_shape,
        scale: net.config().scale,
        warmup,
        median_ms: median(runs_ms.clone()),
        runs_ms,
        hardware: Hardware::detect(),
        note: "single stream; run with no concurrent load".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny(scale: usize) -> I3Net<f32> {
        let cfg = ModelConfig {
            channels: 8,
            n_blocks: 1,
            cvb_positions: vec![],
            window: 8,
            scale,
            ..ModelConfig::default()
        };
        I3Net::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn report_carries_shapes() {
        let r = bench_latency(&tiny(6), [4, 16, 16], 1, 3).unwrap();
        assert_eq!((r.input_shape, r.output_shape, r.scale), ([4, 16, 16], [19, 16, 16], 6));
        assert_eq!(r.runs_ms.len(), 3);
        assert!(r.median_ms > 0.0 && r.hardware.logical_cpus >= 1);
    }

    #[test]
    fn larger_planes_take_longer() {
        let net = tiny(2);
        let small = bench_latency(&net, [4, 32, 32], 1, 5).unwrap().median_ms;
        let large = bench_latency(&net, [4, 64, 64], 1, 5).unwrap().median_ms;
        assert!(large > small, "{large} vs {small}");
    }
}
