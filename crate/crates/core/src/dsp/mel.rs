use ndarray::Array2;
use num_complex::Complex;

use super::stft::Stft;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Number of mel bands.
pub const N_MELS: usize = 64;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank spanning `[0, sample_rate / 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_mels × (n_fft / 2 + 1)`, non-negative.
    pub weights: Array2<f64>,
    pub sample_rate: u32,
    pub n_fft: usize,
}

impl MelFilterbank {
    /// Filters too narrow to cover any FFT bin (low bands at small `n_fft`)
    /// fall back to a unit weight on the bin nearest their center, so every
    /// band carries energy.
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize) -> Self {
        let bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mut weights = Array2::zeros((n_mels, bins));
        for m in 0..n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut any = false;
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= center {
                    (f - lo) / (center - lo)
                } else {
                    (hi - f) / (hi - center)
                };
                if w > 0.0 {
                    weights[[m, k]] = w;
                    any = true;
                }
            }
            if !any {
                let nearest = ((center / bin_hz).round() as usize).min(bins - 1);
                weights[[m, nearest]] = 1.0;
            }
        }
        Self {
            weights,
            sample_rate,
            n_fft,
        }
    }

    /// Center frequency of each band in Hz.
    pub fn centers(&self) -> Vec<f64> {
        let n_mels = self.weights.nrows();
        let top = hz_to_mel(self.sample_rate as f64 / 2.0);
        (1..=n_mels)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect()
    }
}

/// Contiguous nonzero run of one filter row.
#[derive(Debug, Clone)]
struct SparseFilter<F> {
    start: usize,
    weights: Vec<F>,
}

/// Cached STFT plan and filterbank for computing mel power at one scale,
/// with the matching backward pass.
#[derive(Debug)]
pub struct MelAnalyzer<F: Real> {
    stft: Stft<F>,
    filters: Vec<SparseFilter<F>>,
}

impl<F: Real> MelAnalyzer<F> {
    /// Analyzer with window `scale` and hop `scale / 4`. `scale` must be a
    /// power of two no smaller than 4.
    pub fn new(sample_rate: u32, scale: usize) -> Result<Self> {
        if scale < 4 || !scale.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "mel scale must be a power of two >= 4, got {scale}"
            )));
        }
        let stft = Stft::new(scale, scale / 4)?;
        let bank = MelFilterbank::new(sample_rate, scale, N_MELS);
        let filters = bank
            .weights
            .rows()
            .into_iter()
            .map(|row| {
                let start = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let end = row.iter().rposition(|&w| w > 0.0).map_or(start, |e| e + 1);
                SparseFilter {
                    start,
                    weights: row.iter().skip(start).take(end - start).map(|&w| F::of_f64(w)).collect(),
                }
            })
            .collect();
        Ok(Self { stft, filters })
    }

    pub fn scale(&self) -> usize {
        self.stft.window_len()
    }

    pub fn hop(&self) -> usize {
        self.stft.hop()
    }

    pub fn num_frames(&self, len: usize) -> Option<usize> {
        self.stft.num_frames(len)
    }

    /// Mel power frames (`frames × 64`, row-major) plus the complex spectrum
    /// needed by [`MelAnalyzer::backward`].
    pub fn mel(&self, x: &[F]) -> Result<(Vec<F>, Vec<Complex<F>>)> {
        let spec = self.stft.spectrum(x)?;
        let bins = self.stft.bins();
        let frames = spec.len() / bins;
        let mut mel = vec![F::zero(); frames * N_MELS];
        for (srow, mrow) in spec.chunks(bins).zip(mel.chunks_mut(N_MELS)) {
            for (m, filt) in mrow.iter_mut().zip(&self.filters) {
                *m = filt
                    .weights
                    .iter()
                    .zip(&srow[filt.start..])
                    .map(|(&w, c)| w * c.norm_sqr())
                    .sum();
            }
        }
        Ok((mel, spec))
    }

    /// Accumulates `∂(Σ g·mel)/∂x` into `dx`.
    pub fn backward(&self, spec: &[Complex<F>], g_mel: &[F], dx: &mut [F]) {
        let bins = self.stft.bins();
        let frames = spec.len() / bins;
        let mut g_power = vec![F::zero(); frames * bins];
        for (prow, grow) in g_power.chunks_mut(bins).zip(g_mel.chunks(N_MELS)) {
            for (filt, &g) in self.filters.iter().zip(grow) {
                for (p, &w) in prow[filt.start..].iter_mut().zip(&filt.weights) {
                    *p += g * w;
                }
            }
        }
        self.stft.power_backward(spec, &g_power, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_band_has_weight_and_centers_ascend() {
        for &n_fft in &[64usize, 128, 2048] {
            let bank = MelFilterbank::new(22050, n_fft, N_MELS);
            for row in bank.weights.rows() {
                assert!(row.iter().any(|&w| w > 0.0));
                assert!(row.iter().all(|&w| w >= 0.0));
            }
            let centers = bank.centers();
            assert!(centers.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn sparse_rows_reproduce_dense_projection() {
        let a = MelAnalyzer::<f64>::new(22050, 256).unwrap();
        let x: Vec<f64> = (0..600).map(|i| ((i as f64) * 0.05).sin() + 0.1 * ((i as f64) * 1.3).cos()).collect();
        let (mel, spec) = a.mel(&x).unwrap();
        let bank = MelFilterbank::new(22050, 256, N_MELS);
        let bins = 129;
        for (t, srow) in spec.chunks(bins).enumerate() {
            for m in 0..N_MELS {
                let dense: f64 = (0..bins).map(|k| bank.weights[[m, k]] * srow[k].norm_sqr()).sum();
                assert!((dense - mel[t * N_MELS + m]).abs() <= 1e-12 * dense.max(1.0));
            }
        }
    }
}
