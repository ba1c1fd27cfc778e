//! Quality metrics, classical baselines and evaluation reports.

mod baseline;
mod metrics;
mod report;

use std::time::Instant;

pub use baseline::{baseline_interp, Baseline, InterpKind};
pub use metrics::{
    gaussian_window, mse, psnr, psnr_from_mse, ssim_2d, ssim_view, view_slice, View, ViewSsim, SSIM_K1, SSIM_K2,
    SSIM_SIGMA, SSIM_WINDOW,
};
pub use report::{Aggregate, EvalReport, MethodReport, Stat, VolumeRow, REPORT_SCHEMA_VERSION};

use crate::error::{validation_err, Result};
use crate::volformat::{downsample_axial, IntensityDomain, Volume};

pub type SynthFn<'a> = Box<dyn Fn(&Volume) -> Result<Volume> + 'a>;

/// A named method mapping a decimated volume to its reconstruction.
pub struct Method<'a> {
    pub name: String,
    pub synth: SynthFn<'a>,
}

impl<'a> Method<'a> {
    pub fn new(name: impl Into<String>, synth: impl Fn(&Volume) -> Result<Volume> + 'a) -> Self {
        Method { name: name.into(), synth: Box::new(synth) }
    }

    pub fn baseline(r: usize, kind: InterpKind) -> Method<'static> {
        Method::new(kind.name(), move |lr: &Volume| Ok(baseline_interp(lr, r, kind)?.volume))
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Skip timing and the timestamp so reports are reproducible bitwise.
    pub deterministic: bool,
    pub warmup: usize,
    pub repeats: usize,
    pub config_fingerprint: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { deterministic: false, warmup: 3, repeats: 10, config_fingerprint: String::new() }
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Runs `f` once for its result, then `warmup` + `repeats` more times and
/// returns the median of the timed runs in milliseconds.
pub fn timed<T>(warmup: usize, repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let out = f()?;
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        f()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok((out, median(times)))
}

fn score(name: &str, pred: &Volume, gt: &Volume, latency_ms: Option<f64>, padded: &mut bool) -> Result<VolumeRow> {
    let p = psnr(pred, gt)?;
    let mut ssim = [0.0; 3];
    for (slot, view) in ssim.iter_mut().zip(View::ALL) {
        let v = ssim_view(pred, gt, view)?;
        *padded |= v.padded;
        *slot = v.value;
    }
    Ok(VolumeRow {
        volume: name.to_string(),
        psnr: p.is_finite().then_some(p),
        psnr_infinite: p.is_infinite(),
        ssim_a: Some(ssim[0]),
        ssim_c: Some(ssim[1]),
        ssim_s: Some(ssim[2]),
        latency_ms,
        error: None,
    })
}

/// Decimates every volume by `r`, reconstructs it with each method and
/// scores the result against the retained high-resolution slices. A
/// method error marks that row failed and evaluation continues.
pub fn evaluate(methods: &[Method], volumes: &[(String, Volume)], r: usize, opts: &EvalOptions) -> Result<EvalReport> {
    if r < 1 {
        return Err(validation_err!("scale factor must be >= 1, got {r}"));
    }
    for (name, v) in volumes {
        if v.domain() != IntensityDomain::NormalizedUnit {
            return Err(validation_err!("volume `{name}` is not normalized"));
        }
    }
    let pairs = volumes
        .iter()
        .map(|(n, v)| downsample_axial(v, r).map(|p| (n, p)))
        .collect::<Result<Vec<_>>>()?;
    let mut padded = false;
    let mut reports = Vec::with_capacity(methods.len());
    for m in methods {
        let mut rows = Vec::with_capacity(pairs.len());
        for (name, (lr, hr)) in &pairs {
            let run = if opts.deterministic {
                (m.synth)(lr).map(|v| (v, None))
            } else {
                timed(opts.warmup, opts.repeats, || (m.synth)(lr)).map(|(v, t)| (v, Some(t)))
            };
            let row = run.and_then(|(pred, t)| score(name, &pred, hr, t, &mut padded));
            rows.push(row.unwrap_or_else(|e| VolumeRow::failed(name.to_string(), e.to_string())));
        }
        reports.push(MethodReport::new(m.name.clone(), rows));
    }
    if methods.iter().any(|m| m.name == InterpKind::Cubic.name()) {
        let short = pairs.iter().any(|(_, (lr, _))| lr.slices() < 4);
        if let Some(rep) = reports.iter_mut().find(|m| m.name == InterpKind::Cubic.name()) {
            rep.fell_back_to_linear = short;
        }
    }
    let timestamp_unix = (!opts.deterministic).then(|| {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    });
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scale: r,
        config_fingerprint: opts.config_fingerprint.clone(),
        timestamp_unix,
        deterministic: opts.deterministic,
        ssim_reflect_padded: padded,
        methods: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::volformat::{gen_phantom, normalize_intensity, PhantomSpec, HU_HI, HU_LO};

    fn phantom(seed: u64) -> Volume {
        let mut spec = PhantomSpec::with_seed(seed);
        spec.size = [9, 32, 32];
        normalize_intensity(&gen_phantom(&spec).unwrap(), HU_LO, HU_HI).unwrap()
    }

    fn fast() -> EvalOptions {
        EvalOptions { warmup: 0, repeats: 1, ..EvalOptions::default() }
    }

    #[test]
    fn ground_truth_oracle_scores_perfectly() {
        let v = phantom(0);
        let (_, hr) = downsample_axial(&v, 2).unwrap();
        let oracle = Method::new("oracle", |_: &Volume| Ok(hr.clone()));
        let rep = evaluate(&[oracle], &[("p0".into(), v)], 2, &fast()).unwrap();
        let row = &rep.methods[0].rows[0];
        assert!(row.psnr_infinite && row.psnr.is_none());
        assert_eq!((row.ssim_a, row.ssim_c, row.ssim_s), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(rep.methods[0].aggregate.psnr_infinite, 1);
        assert!(rep.methods[0].aggregate.psnr.is_none());
        assert!(rep.to_csv().contains("oracle,inf,1.000000,1.000000,1.000000"));
    }

    #[test]
    fn linear_beats_nearest_on_smooth_phantom() {
        let vols: Vec<(String, Volume)> = (0..2).map(|i| (format!("p{i}"), phantom(i))).collect();
        let methods = [Method::baseline(2, InterpKind::Nearest), Method::baseline(2, InterpKind::Linear)];
        let rep = evaluate(&methods, &vols, 2, &fast()).unwrap();
        for i in 0..2 {
            let n = rep.methods[0].rows[i].psnr.unwrap();
            let l = rep.methods[1].rows[i].psnr.unwrap();
            assert!(l > n, "linear {l} vs nearest {n}");
        }
    }

    #[test]
    fn failing_method_marks_row_and_continues() {
        let vols = vec![("a".to_string(), phantom(3)), ("b".to_string(), phantom(4))];
        let calls = std::cell::Cell::new(0);
        let flaky = Method::new("flaky", |lr: &Volume| {
            calls.set(calls.get() + 1);
            if calls.get() == 1 {
                Err(Error::Numerical("boom".into()))
            } else {
                Ok(baseline_interp(lr, 2, InterpKind::Linear)?.volume)
            }
        });
        let rep = evaluate(&[flaky, Method::baseline(2, InterpKind::Linear)], &vols, 2, &fast()).unwrap();
        let m = &rep.methods[0];
        assert!(m.rows[0].error.as_deref().unwrap().contains("boom"));
        assert!(m.rows[1].ok());
        assert_eq!((m.aggregate.n_ok, m.aggregate.n_failed), (1, 1));
        assert_eq!(rep.methods[1].aggregate.n_ok, 2);
    }

    #[test]
    fn report_round_trips_and_aggregates_recompute() {
        let vols: Vec<(String, Volume)> = (0..3).map(|i| (format!("p{i}"), phantom(10 + i))).collect();
        let methods = [
            Method::baseline(2, InterpKind::Nearest),
            Method::baseline(2, InterpKind::Linear),
            Method::baseline(2, InterpKind::Cubic),
        ];
        let rep = evaluate(&methods, &vols, 2, &fast()).unwrap();
        assert!(rep.timestamp_unix.is_some());
        assert!(rep.methods[0].rows[0].latency_ms.is_some());
        let back = EvalReport::from_json(&rep.to_json()).unwrap();
        assert_eq!(back, rep);

        // Recompute the linear aggregate by hand.
        let ps: Vec<f64> = rep.methods[1].rows.iter().map(|r| r.psnr.unwrap()).collect();
        let mean = ps.iter().sum::<f64>() / 3.0;
        let std = (ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        let agg = rep.methods[1].aggregate.psnr.unwrap();
        assert!((agg.mean - mean).abs() < 1e-9 && (agg.std - std).abs() < 1e-9);

        let mut tampered = rep.clone();
        tampered.methods[1].aggregate.psnr.as_mut().unwrap().mean += 1e-6;
        assert!(tampered.verify_aggregates().is_err());
    }

    #[test]
    fn deterministic_reports_are_identical() {
        let vols = vec![("p".to_string(), phantom(5))];
        let opts = EvalOptions { deterministic: true, ..EvalOptions::default() };
        let a = evaluate(&[Method::baseline(2, InterpKind::Linear)], &vols, 2, &opts).unwrap();
        let b = evaluate(&[Method::baseline(2, InterpKind::Linear)], &vols, 2, &opts).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.timestamp_unix.is_none() && a.methods[0].rows[0].latency_ms.is_none());
    }

    #[test]
    fn raw_volumes_rejected() {
        let mut spec = PhantomSpec::with_seed(0);
        spec.size = [5, 16, 16];
        let raw = gen_phantom(&spec).unwrap();
        assert!(evaluate(&[], &[("r".into(), raw)], 2, &fast()).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
