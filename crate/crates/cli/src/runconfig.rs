//! The merged run configuration: a schema-versioned JSON file, overridden
//! by `key=value` pairs, validated as a whole.

use std::path::{Path, PathBuf};

use i3net_core::model::ModelConfig;
use i3net_core::train::TrainConfig;
use i3net_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Synthetic phantoms generated on the fly. Training volumes use seeds
/// `seed..seed + train`, validation volumes the next `val` seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSet {
    pub train: usize,
    pub val: usize,
    pub seed: u64,
    /// `[S, H, W]`.
    pub size: [usize; 3],
}

impl Default for PhantomSet {
    fn default() -> Self {
        PhantomSet { train: 20, val: 5, seed: 0, size: [19, 64, 64] }
    }
}

/// Either directories of `.rvl` volumes or a phantom set; directories win
/// when given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub phantoms: PhantomSet,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train_dir: None, val_dir: None, phantoms: PhantomSet::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Patch-sampling threads.
    pub workers: usize,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            workers: 1,
            deterministic: false,
        }
    }
}

impl RunConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!("schema_version = {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        out.extend(self.model.problems().into_iter().map(|p| prefixed("model", p)));
        out.extend(self.train.problems());
        if self.workers == 0 {
            out.push("workers must be >= 1".into());
        }
        let ph = &self.data.phantoms;
        if self.data.train_dir.is_none() {
            if ph.train == 0 {
                out.push("data.phantoms.train must be >= 1 when data.train_dir is unset".into());
            }
            let span = self.model.out_slices();
            if ph.size[0] < span {
                out.push(format!("data.phantoms.size has {} slices, training patches need {span}", ph.size[0]));
            }
            if ph.size[1].min(ph.size[2]) < self.train.crop {
                out.push(format!("data.phantoms.size {:?} is smaller than train.crop = {}", ph.size, self.train.crop));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the canonical JSON.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.to_json())
    }
}

pub fn fingerprint(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn prefixed(section: &str, p: String) -> String {
    if p.starts_with(&format!("{section}.")) {
        p
    } else {
        format!("{section}: {p}")
    }
}

/// Splits `a.b.c=value`; the value is read as JSON, or as a string when it
/// does not parse.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(vec![format!("override `{s}` is not key=value")]))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn set_path(root: &mut Value, key: &str, value: Value, problems: &mut Vec<String>) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = cur else {
            problems.push(format!("override `{key}`: `{}` is not a section", parts[..i].join(".")));
            return;
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return;
        }
        cur = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Checks one object against the fields of `T`: every unknown key and
/// every field that fails to deserialize on its own is reported. Keys in
/// `nested` are sections checked separately.
fn check_object<T: Serialize + DeserializeOwned + Default>(
    path: &str,
    v: &Value,
    nested: &[&str],
    problems: &mut Vec<String>,
) {
    let Value::Object(given) = v else {
        problems.push(format!("{path}: expected an object, got {v}"));
        return;
    };
    let Value::Object(defaults) = serde_json::to_value(T::default()).expect("defaults serialize") else {
        return;
    };
    let dot = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    for (k, val) in given {
        if !defaults.contains_key(k) {
            problems.push(format!("unknown key `{}`", dot(k)));
            continue;
        }
        if nested.contains(&k.as_str()) && val.is_object() {
            continue;
        }
        let mut probe = defaults.clone();
        probe.insert(k.clone(), val.clone());
        if let Err(e) = serde_json::from_value::<T>(Value::Object(probe)) {
            problems.push(format!("{}: {e}", dot(k)));
        }
    }
}

/// Merges the file at `path` (empty means all defaults) with `overrides`,
/// then validates. All problems are reported together.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            if text.trim().is_empty() {
                Value::Object(Map::new())
            } else {
                serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))?
            }
        }
        None => Value::Object(Map::new()),
    };
    let mut problems = Vec::new();
    for (k, v) in overrides {
        set_path(&mut root, k, v.clone(), &mut problems);
    }
    check_object::<RunConfig>("", &root, &["model", "train", "data"], &mut problems);
    let section = |name: &str| match &root {
        Value::Object(m) => m.get(name).filter(|v| v.is_object()),
        _ => None,
    };
    if let Some(v) = section("model") {
        check_object::<ModelConfig>("model", v, &[], &mut problems);
    }
    if let Some(v) = section("train") {
        check_object::<TrainConfig>("train", v, &[], &mut problems);
    }
    if let Some(v) = section("data") {
        check_object::<DataConfig>("data", v, &["phantoms"], &mut problems);
        if let Some(ph) = v.get("phantoms").filter(|p| p.is_object()) {
            check_object::<PhantomSet>("data.phantoms", ph, &[], &mut problems);
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let mut cfg: RunConfig = serde_json::from_value(root).map_err(|e| Error::Config(vec![e.to_string()]))?;
    if let Some(base) = path.and_then(Path::parent) {
        for dir in [&mut cfg.data.train_dir, &mut cfg.data.val_dir].into_iter().flatten() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
