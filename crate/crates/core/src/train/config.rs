use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volformat::CROP_MULTIPLE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
    pub patches_per_volume: usize,
    /// In-plane center crop of every training patch.
    pub crop: usize,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Epochs between validation passes; 0 disables validation.
    pub val_interval: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            lr0: 3e-4,
            seed: 0,
            patches_per_volume: 1,
            crop: 64,
            checkpoint_interval: 10,
            val_interval: 5,
            grad_clip: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            out.push(format!("train.lr0 = {} must be > 0", self.lr0));
        }
        if self.batch_size == 0 {
            out.push("train.batch_size must be >= 1".into());
        }
        if self.epochs == 0 {
            out.push("train.epochs must be >= 1".into());
        }
        if self.patches_per_volume == 0 {
            out.push("train.patches_per_volume must be >= 1".into());
        }
        if self.crop == 0 || self.crop % CROP_MULTIPLE != 0 {
            out.push(format!("train.crop = {} must be a positive multiple of {CROP_MULTIPLE}", self.crop));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                out.push(format!("train.grad_clip = {c} must be > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            out.push("train.adam_beta1 and train.adam_beta2 must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            out.push("train.adam_eps must be > 0".into());
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

    /// Optimizer steps per epoch for `n_volumes` training volumes.
    pub fn steps_per_epoch(&self, n_volumes: usize) -> usize {
        (n_volumes * self.patches_per_volume).div_ceil(self.batch_size)
    }
}
