use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Architecture of the causal-attention transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FipConfig {
    pub d: usize,
    /// Residual stream width `D`.
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_hidden: usize,
    /// Graph extraction threshold on mean absolute Jacobian entries.
    pub tau: f64,
    pub ln_eps: f64,
}

impl FipConfig {
    /// Full-size model: `D = 128`, two layers, eight heads of width 32.
    pub fn full_scale(d: usize) -> Self {
        Self {
            d,
            embed_dim: 128,
            layers: 2,
            heads: 8,
            head_dim: 32,
            mlp_hidden: 128,
            tau: 0.1,
            ln_eps: 1e-5,
        }
    }

    /// Reduced widths sized for single-core training.
    pub fn desk(d: usize) -> Self {
        Self {
            d,
            embed_dim: 16,
            layers: 2,
            heads: 2,
            head_dim: 8,
            mlp_hidden: 32,
            tau: 0.1,
            ln_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("embed_dim", self.embed_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("mlp_hidden", self.mlp_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{name} must be positive")));
        }
        if !(self.tau >= 0.0) || !(self.ln_eps > 0.0) {
            return Err(CoreError::Config("tau must be non-negative and ln_eps positive".into()));
        }
        Ok(())
    }

    /// Width of the concatenated head outputs.
    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FipTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Defaults to `min(1024, 0.8 n)`.
    pub batch_size: Option<usize>,
    /// Cosine-anneal the learning rate towards `lr / 50` over the run.
    #[serde(default)]
    pub cosine_decay: bool,
}

impl Default for FipTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-4,
            weight_decay: 5e-9,
            batch_size: None,
            cosine_decay: false,
        }
    }
}

impl FipTrainConfig {
    /// Shorter schedule with a larger, annealed step for the desk widths.
    pub fn desk() -> Self {
        Self {
            epochs: 60,
            lr: 1e-2,
            cosine_decay: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(CoreError::Config("lr must be positive and weight_decay non-negative".into()));
        }
        if self.batch_size == Some(0) {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}
