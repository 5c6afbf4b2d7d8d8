use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the encoder/decoder pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    /// Downsampling factor of each encoder block.
    pub strides: Vec<usize>,
    /// Kernel width of each strided convolution.
    pub kernels: Vec<usize>,
    pub base_channels: usize,
    pub latent_channels: usize,
    /// Bidirectional LSTM layers after the convolutional stack.
    pub lstm_layers: usize,
    pub n_sources: usize,
    pub sample_rate: u32,
    pub context_seconds: f64,
    pub use_skips: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub prelu_init: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            strides: vec![5, 5, 4, 2],
            kernels: vec![7, 7, 7, 5],
            base_channels: 16,
            latent_channels: 256,
            lstm_layers: 2,
            n_sources: 4,
            sample_rate: 22050,
            context_seconds: 4.0,
            use_skips: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            prelu_init: 0.25,
        }
    }
}

impl CodecConfig {
    /// Overall downsampling factor `f`.
    pub fn fold(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn blocks(&self) -> usize {
        self.strides.len()
    }

    /// Channel count entering encoder block `i` (and leaving decoder block `i`).
    pub fn channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Training clip length in samples.
    pub fn context_samples(&self) -> usize {
        (self.context_seconds * self.sample_rate as f64).round() as usize
    }

    /// Latent frames per second.
    pub fn latent_rate(&self) -> f64 {
        self.sample_rate as f64 / self.fold() as f64
    }

    /// Latent length `T_c` of a `len`-sample input.
    pub fn latent_len(&self, len: usize) -> Result<usize> {
        let f = self.fold();
        if len == 0 || len % f != 0 {
            return Err(Error::InvalidInput(format!(
                "input length {len} is not a positive multiple of the fold reduction {f}; pad or chunk the input"
            )));
        }
        Ok(len / f)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.strides.len();
        if n == 0 {
            return Err(Error::config("codec.strides", "at least one stride is required"));
        }
        if self.kernels.len() != n {
            return Err(Error::config(
                "codec.kernels",
                format!("{} kernels given for {n} strides", self.kernels.len()),
            ));
        }
        for (i, (&s, &k)) in self.strides.iter().zip(&self.kernels).enumerate() {
            if s == 0 {
                return Err(Error::config("codec.strides", format!("stride {i} is zero")));
            }
            if k < s || k % 2 == 0 {
                return Err(Error::config(
                    "codec.kernels",
                    format!("kernel {i} ({k}) must be odd and at least its stride ({s})"),
                ));
            }
        }
        if self.base_channels == 0 {
            return Err(Error::config("codec.base_channels", "must be positive"));
        }
        let want = self.base_channels << n;
        if self.latent_channels != want {
            return Err(Error::config(
                "codec.latent_channels",
                format!("must equal base_channels * 2^{n} = {want}, got {}", self.latent_channels),
            ));
        }
        if self.latent_channels % 2 != 0 {
            return Err(Error::config("codec.latent_channels", "must be even for the bidirectional LSTM"));
        }
        if self.n_sources == 0 {
            return Err(Error::config("codec.n_sources", "must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("codec.sample_rate", "must be positive"));
        }
        let ctx = self.context_seconds * self.sample_rate as f64;
        let f = self.fold();
        if !(ctx > 0.0) || (ctx - ctx.round()).abs() > 1e-9 || ctx.round() as usize % f != 0 {
            return Err(Error::config(
                "codec.context_seconds",
                format!(
                    "context of {} s at {} Hz ({ctx} samples) is not divisible by the fold reduction {f} (product of strides)",
                    self.context_seconds, self.sample_rate
                ),
            ));
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::config("codec.bn_momentum", "batch-norm eps must be > 0 and momentum in (0, 1]"));
        }
        Ok(())
    }
}

/// Weights and settings of the training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub w_spec: f64,
    pub w_rec: f64,
    pub w_comm: f64,
    /// Mel analysis window lengths.
    pub scales: Vec<usize>,
    /// Weight of the log-mel term at every scale.
    pub alpha: f64,
    pub log_eps: f64,
    /// Include the `‖z_e − sg[z_qᵈ]‖²` commitment term.
    pub commit_third_term: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_spec: 1.0,
            w_rec: 10.0,
            w_comm: 1.0,
            scales: vec![64, 128, 256, 512, 1024, 2048],
            alpha: 1.0,
            log_eps: crate::dsp::LOG_EPS,
            commit_third_term: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::config("loss.scales", "at least one scale is required"));
        }
        if let Some(&s) = self.scales.iter().find(|&&s| s < 4 || !s.is_power_of_two()) {
            return Err(Error::config("loss.scales", format!("scale {s} is not a power of two >= 4")));
        }
        if !(self.log_eps > 0.0) {
            return Err(Error::config("loss.log_eps", "must be positive"));
        }
        for (name, w) in [("loss.w_spec", self.w_spec), ("loss.w_rec", self.w_rec), ("loss.w_comm", self.w_comm)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn max_scale(&self) -> usize {
        self.scales.iter().copied().max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_fold_is_200() {
        let c = CodecConfig::default();
        c.validate().unwrap();
        assert_eq!(c.fold(), 200);
        assert_eq!(c.latent_len(88200).unwrap(), 441);
        assert!((c.latent_rate() - 110.25).abs() < 1e-12);
        LossConfig::default().validate().unwrap();
    }

    #[test]
    fn literal_stride_list_gives_294_with_matching_context() {
        let c = CodecConfig {
            strides: vec![5, 5, 4, 3],
            ..Default::default()
        };
        c.validate().unwrap();
        assert_eq!(c.latent_len(88200).unwrap(), 294);
        let c = CodecConfig {
            strides: vec![5, 5, 5, 3],
            ..Default::default()
        };
        // 88200 is not a multiple of 375.
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("fold reduction"), "{err}");
    }

    #[test]
    fn rejects_inconsistent_channels_and_kernels() {
        let c = CodecConfig {
            latent_channels: 128,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = CodecConfig {
            kernels: vec![3, 7, 7, 5],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(CodecConfig::default().latent_len(1001).is_err());
    }
}
