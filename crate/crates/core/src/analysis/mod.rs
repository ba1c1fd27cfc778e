//! Diagnostic probes: frequency energy, channel redundancy, receptive
//! fields, HU display windows and inference latency.

mod bench;
mod freq;
mod hu;
mod receptive;
mod redundancy;

pub use bench::{bench_latency, BenchReport, Hardware, BENCH_REPEATS, BENCH_WARMUP};
pub use freq::{energy_curve, hf_energy_ratio, parseval_residual, EnergyCurve, FreqRegions, HfRatio};
pub use hu::{hu_window, ImageStack};
pub use receptive::{receptive_probe, Saliency, SUPPORT_EPS};
pub use redundancy::{feature_redundancy, Redundancy};
