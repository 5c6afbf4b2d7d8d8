use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and sampling settings of the code-grid prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    /// Codebook size `N_cb`.
    pub n_cb: usize,
    /// Quantizer depth `Q`.
    pub q_depth: usize,
    pub model_dim: usize,
    pub spatial_layers: usize,
    pub depth_layers: usize,
    pub heads: usize,
    /// Longest grid (in latent positions) the model accepts.
    pub max_positions: usize,
    /// Hidden width of each MLP as a multiple of `model_dim`.
    pub mlp_ratio: usize,
    pub temperature: f64,
    /// Sample among the `top_k` most likely codes; 0 disables the filter.
    pub top_k: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            n_cb: 4096,
            q_depth: 12,
            model_dim: 256,
            spatial_layers: 8,
            depth_layers: 4,
            heads: 4,
            max_positions: 512,
            mlp_ratio: 4,
            temperature: 1.0,
            top_k: 64,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lm.n_cb", self.n_cb),
            ("lm.q_depth", self.q_depth),
            ("lm.model_dim", self.model_dim),
            ("lm.heads", self.heads),
            ("lm.max_positions", self.max_positions),
            ("lm.mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::config(
                "lm.model_dim",
                format!("{} is not divisible by {} heads", self.model_dim, self.heads),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("lm.temperature", "must be finite and non-negative"));
        }
        Ok(())
    }
}
