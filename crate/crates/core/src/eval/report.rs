use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One (method, volume) evaluation. Metric fields are `None` when the
/// method failed; `psnr` is also `None` when `psnr_infinite` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub volume: String,
    pub psnr: Option<f64>,
    pub psnr_infinite: bool,
    pub ssim_a: Option<f64>,
    pub ssim_c: Option<f64>,
    pub ssim_s: Option<f64>,
    pub latency_ms: Option<f64>,
    pub error: Option<String>,
}

impl VolumeRow {
    pub fn failed(volume: String, error: String) -> Self {
        VolumeRow {
            volume,
            psnr: None,
            psnr_infinite: false,
            ssim_a: None,
            ssim_c: None,
            ssim_s: None,
            latency_ms: None,
            error: Some(error),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Mean and population standard deviation of the defined entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Stat { mean, std: var.sqrt(), n: v.len() })
    }
}

/// Infinite-PSNR rows are left out of `psnr` and counted in `psnr_infinite`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_ok: usize,
    pub n_failed: usize,
    pub psnr_infinite: usize,
    pub psnr: Option<Stat>,
    pub ssim_a: Option<Stat>,
    pub ssim_c: Option<Stat>,
    pub ssim_s: Option<Stat>,
    pub latency_ms: Option<Stat>,
}

impl Aggregate {
    pub fn from_rows(rows: &[VolumeRow]) -> Self {
        let ok: Vec<&VolumeRow> = rows.iter().filter(|r| r.ok()).collect();
        let col = |f: fn(&VolumeRow) -> Option<f64>| Stat::of(ok.iter().filter_map(|r| f(r)));
        Aggregate {
            n_ok: ok.len(),
            n_failed: rows.len() - ok.len(),
            psnr_infinite: ok.iter().filter(|r| r.psnr_infinite).count(),
            psnr: col(|r| r.psnr),
            ssim_a: col(|r| r.ssim_a),
            ssim_c: col(|r| r.ssim_c),
            ssim_s: col(|r| r.ssim_s),
            latency_ms: col(|r| r.latency_ms),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    /// Cubic requested on a volume with fewer than 4 slices.
    #[serde(default)]
    pub fell_back_to_linear: bool,
    pub rows: Vec<VolumeRow>,
    pub aggregate: Aggregate,
}

impl MethodReport {
    pub fn new(name: String, rows: Vec<VolumeRow>) -> Self {
        let aggregate = Aggregate::from_rows(&rows);
        MethodReport { name, fell_back_to_linear: false, rows, aggregate }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub scale: usize,
    /// SHA-256 of the caller's resolved configuration.
    pub config_fingerprint: String,
    /// Seconds since the Unix epoch; omitted in deterministic mode.
    pub timestamp_unix: Option<u64>,
    pub deterministic: bool,
    /// Some coronal or sagittal slice was smaller than the SSIM window.
    pub ssim_reflect_padded: bool,
    pub methods: Vec<MethodReport>,
}

fn close(a: Option<Stat>, b: Option<Stat>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => a.n == b.n && (a.mean - b.mean).abs() <= 1e-9 && (a.std - b.std).abs() <= 1e-9,
        _ => false,
    }
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Errors if any stored aggregate differs from recomputation by more
    /// than 1e-9.
    pub fn verify_aggregates(&self) -> Result<()> {
        for m in &self.methods {
            let want = Aggregate::from_rows(&m.rows);
            let a = &m.aggregate;
            let ok = a.n_ok == want.n_ok
                && a.n_failed == want.n_failed
                && a.psnr_infinite == want.psnr_infinite
                && close(a.psnr, want.psnr)
                && close(a.ssim_a, want.ssim_a)
                && close(a.ssim_c, want.ssim_c)
                && close(a.ssim_s, want.ssim_s)
                && close(a.latency_ms, want.latency_ms);
            if !ok {
                return Err(Error::Validation(format!("aggregate of method `{}` does not match its rows", m.name)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(s).map_err(|e| Error::format("report", e.to_string()))?;
        r.verify_aggregates()?;
        Ok(r)
    }

    /// `Method,PSNR,SSIM_a,SSIM_c,SSIM_s` with aggregate means. PSNR is
    /// `inf` when every successful row was infinite, empty when undefined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Method,PSNR,SSIM_a,SSIM_c,SSIM_s\n");
        let cell = |s: Option<Stat>| s.map(|s| format!("{:.6}", s.mean)).unwrap_or_default();
        for m in &self.methods {
            let a = &m.aggregate;
            let psnr = match a.psnr {
                Some(s) => format!("{:.6}", s.mean),
                None if a.psnr_infinite > 0 => "inf".into(),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.name,
                psnr,
                cell(a.ssim_a),
                cell(a.ssim_c),
                cell(a.ssim_s)
            ));
        }
        out
    }
}
