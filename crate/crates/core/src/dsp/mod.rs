//! Signal-processing kernels: waveforms, resampling, STFT, and mel spectrograms.

mod mel;
mod resample;
mod stft;

pub use mel::{MelAnalyzer, MelFilterbank, N_MELS};
pub use resample::resample;
pub use stft::{hann_window, Stft};

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Floor applied before taking the log of mel power.
pub const LOG_EPS: f64 = 1e-5;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    /// Rejects a zero sample rate and any NaN or infinite sample.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sub-range `[start, start + len)` as a new waveform.
    pub fn slice(&self, start: usize, len: usize) -> Waveform {
        Waveform {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (e / self.samples.len() as f64).sqrt()
    }
}

/// Mel-band power frames of one waveform at one analysis scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `num_frames × 64`, non-negative.
    pub frames: Array2<f64>,
    /// Window length in samples.
    pub scale: usize,
    /// Hop in samples (`scale / 4`).
    pub hop: usize,
}

impl MelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }
}

/// Hann-windowed one-sided STFT without centering; trailing samples that do
/// not fill a frame are ignored. Shape `frames × (window_len / 2 + 1)`.
pub fn stft(w: &Waveform, window_len: usize, hop: usize) -> Result<Array2<Complex64>> {
    let analyzer = Stft::<f64>::new(window_len, hop)?;
    let x = w.to_f64();
    let spec = analyzer.spectrum(&x)?;
    let frames = analyzer.num_frames(x.len()).unwrap_or(0);
    Ok(Array2::from_shape_vec((frames, analyzer.bins()), spec).expect("stft shape"))
}

/// 64-band mel power spectrogram with window `scale` and hop `scale / 4`.
pub fn mel_spectrogram(w: &Waveform, scale: usize) -> Result<MelSpectrogram> {
    let analyzer = MelAnalyzer::<f64>::new(w.sample_rate(), scale)?;
    let x = w.to_f64();
    let (mel, _) = analyzer.mel(&x)?;
    let frames = analyzer.num_frames(x.len()).unwrap_or(0);
    Ok(MelSpectrogram {
        frames: Array2::from_shape_vec((frames, N_MELS), mel).expect("mel shape"),
        scale,
        hop: analyzer.hop(),
    })
}

/// Elementwise `ln(max(entry, eps))`.
pub fn log_mel(m: &MelSpectrogram, eps: f64) -> Result<Array2<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("log floor must be positive".into()));
    }
    Ok(m.frames.mapv(|v| v.max(eps).ln()))
}
