use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual unit used for every block of the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Inter-slice and/or intra-slice branches summed onto the identity.
    I2,
    /// `conv3x3 -> ReLU -> conv3x3` at full resolution; the ablation baseline.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature width `C`.
    pub channels: usize,
    pub n_blocks: usize,
    /// 1-based block indices after which a cross-view block is inserted.
    pub cvb_positions: Vec<usize>,
    /// Frequency window size `p`.
    pub window: usize,
    /// Input slices per patch.
    pub s_in: usize,
    /// Axial upsampling factor `R`.
    pub scale: usize,
    pub token_expansion: usize,
    pub channel_expansion: usize,
    pub block: BlockKind,
    pub inter: bool,
    pub intra: bool,
    /// Add linear axial interpolation of the input to the tail output.
    pub global_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 32,
            n_blocks: 16,
            cvb_positions: vec![4, 8, 12],
            window: 16,
            s_in: 4,
            scale: 2,
            token_expansion: 1,
            channel_expansion: 1,
            block: BlockKind::I2,
            inter: true,
            intra: true,
            global_residual: true,
        }
    }
}

impl ModelConfig {
    /// Output slices per patch, `(S_in - 1)·R + 1`.
    pub fn out_slices(&self) -> usize {
        (self.s_in - 1) * self.scale + 1
    }

    pub fn uses_intra(&self) -> bool {
        self.block == BlockKind::I2 && self.intra
    }

    /// Spatial sizes must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        if self.uses_intra() {
            lcm(2, self.window)
        } else {
            2
        }
    }

    /// Collects every violated constraint.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.channels < 4 || self.channels % 4 != 0 {
            out.push(format!(
                "model.channels = {} must be a positive multiple of 4 (pixel shuffle factor)",
                self.channels
            ));
        }
        if self.n_blocks == 0 {
            out.push("model.n_blocks must be >= 1".into());
        }
        if self.window == 0 {
            out.push("model.window must be >= 1".into());
        }
        if self.s_in < 2 {
            out.push(format!("model.s_in = {} must be >= 2", self.s_in));
        }
        if self.scale < 1 {
            out.push("model.scale must be >= 1".into());
        }
        if self.token_expansion == 0 || self.channel_expansion == 0 {
            out.push("model expansion factors must be >= 1".into());
        }
        if !self.cvb_positions.windows(2).all(|w| w[0] < w[1]) {
            out.push("model.cvb_positions must be strictly increasing".into());
        }
        if let Some(&bad) = self.cvb_positions.iter().find(|&&i| i < 1 || i > self.n_blocks) {
            out.push(format!("model.cvb_positions entry {bad} outside [1, {}]", self.n_blocks));
        }
        if self.block == BlockKind::I2 && !self.inter && !self.intra {
            out.push("an i2 block needs at least one of model.inter / model.intra".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Closed-form learnable parameter count.
    pub fn expected_parameter_count(&self) -> usize {
        let c = self.channels;
        let conv = |ci: usize, co: usize, k: usize| ci * co * k + co;
        let linear = |i: usize, o: usize| i * o + o;
        let ln = 2 * c;
        let head = conv(self.s_in, c, 9);
        let tail = conv(c, self.out_slices(), 9);
        let block = match self.block {
            BlockKind::Plain => 2 * conv(c, c, 9),
            BlockKind::I2 => {
                let inter = if self.inter { 2 * conv(4 * c, 4 * c, 9) } else { 0 };
                let t = self.window * self.window;
                let (th, ch) = (t * self.token_expansion, c * self.channel_expansion);
                let intra = if self.intra {
                    2 * ln + linear(t, th) + linear(th, t) + linear(c, ch) + linear(ch, c) + conv(c, c, 1)
                } else {
                    0
                };
                inter + intra
            }
        };
        let q = c / 4;
        let cvb = ln + 2 * conv(c, c, 1) + 4 * conv(q, q, 3);
        head + self.n_blocks * block + self.cvb_positions.len() * cvb + tail
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}
