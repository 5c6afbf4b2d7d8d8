use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Periodic Hann window of length `n`.
pub fn hann_window<F: Real>(n: usize) -> Vec<F> {
    (0..n)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            F::of_f64(0.5 - 0.5 * phase.cos())
        })
        .collect()
}

/// Short-time Fourier transform with a fixed window and hop.
///
/// Frame `t` covers samples `[t * hop, t * hop + window_len)`; no padding.
pub struct Stft<F: Real> {
    window_len: usize,
    hop: usize,
    window: Vec<F>,
    fft: Arc<dyn Fft<F>>,
}

impl<F: Real> std::fmt::Debug for Stft<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("window_len", &self.window_len)
            .field("hop", &self.hop)
            .finish()
    }
}

impl<F: Real> Stft<F> {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        if hop == 0 || window_len < hop {
            return Err(Error::InvalidInput(format!(
                "stft needs window_len >= hop >= 1 (window {window_len}, hop {hop})"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(window_len);
        Ok(Self {
            window_len,
            hop,
            window: hann_window(window_len),
            fft,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// One-sided bin count, `window_len / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Number of complete frames, or `None` when `len < window_len`.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        (len >= self.window_len).then(|| (len - self.window_len) / self.hop + 1)
    }

    /// Row-major `frames × bins` complex spectrum.
    pub fn spectrum(&self, x: &[F]) -> Result<Vec<Complex<F>>> {
        let frames = self.num_frames(x.len()).ok_or(Error::TooShort {
            needed: self.window_len,
            got: x.len(),
        })?;
        let bins = self.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(F::zero(), F::zero()); self.window_len];
        let mut scratch = vec![Complex::new(F::zero(), F::zero()); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let frame = &x[t * self.hop..t * self.hop + self.window_len];
            for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(s * w, F::zero());
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            out.extend_from_slice(&buf[..bins]);
        }
        Ok(out)
    }

    /// Accumulates into `dx` the gradient of `Σ g[t,k] · |X[t,k]|²` with
    /// respect to the signal, given the forward spectrum `spec`.
    pub fn power_backward(&self, spec: &[Complex<F>], g_power: &[F], dx: &mut [F]) {
        let bins = self.bins();
        let frames = spec.len() / bins;
        let two = F::of_f64(2.0);
        let zero = Complex::new(F::zero(), F::zero());
        let mut buf = vec![zero; self.window_len];
        let mut scratch = vec![zero; self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let grow = &g_power[t * bins..(t + 1) * bins];
            let srow = &spec[t * bins..(t + 1) * bins];
            if grow.iter().all(|g| *g == F::zero()) {
                continue;
            }
            // d|X_k|²/dx_n = 2 w_n Re(conj(X_k) e^{-2πikn/N}); summing over k
            // is a forward DFT of c_k = g_k conj(X_k) over the one-sided bins.
            for (k, b) in buf.iter_mut().enumerate() {
                *b = if k < bins { srow[k].conj() * grow[k] } else { zero };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let dst = &mut dx[t * self.hop..t * self.hop + self.window_len];
            for ((d, b), &w) in dst.iter_mut().zip(&buf).zip(&self.window) {
                *d += two * w * b.re;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, Waveform};

    fn direct_dft(frame: &[f64]) -> Vec<Complex<f64>> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                frame.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (i, &x)| {
                    let phase = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    acc + Complex::new(phase.cos(), phase.sin()) * x
                })
            })
            .collect()
    }

    #[test]
    fn zero_signal_has_zero_spectrum() {
        let s = stft(&Waveform::zeros(512, 8000), 128, 32).unwrap();
        assert!(s.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn bin_center_cosine_peaks_at_its_bin() {
        let (n, k, rate) = (256usize, 10usize, 8000u32);
        let f = k as f64 / n as f64 * rate as f64;
        let x: Vec<f32> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / rate as f64).cos() as f32)
            .collect();
        let w = Waveform::new(x.clone(), rate).unwrap();
        let s = stft(&w, n, n).unwrap();
        let power: Vec<f64> = s.row(0).iter().map(|c| c.norm_sqr()).collect();
        let argmax = power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, k);
        // Same bin from a brute-force DFT of the windowed frame.
        let win = hann_window::<f64>(n);
        let frame: Vec<f64> = x.iter().zip(&win).map(|(&a, &b)| a as f64 * b).collect();
        let brute = direct_dft(&frame);
        for (a, b) in s.row(0).iter().zip(&brute) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn exact_tiling_gives_two_frames() {
        let s = stft(&Waveform::zeros(256, 8000), 128, 128).unwrap();
        assert_eq!(s.nrows(), 2);
        assert!(matches!(
            stft(&Waveform::zeros(100, 8000), 128, 32),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn parseval_holds_per_frame() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &n in &[64usize, 256, 1024] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let st = Stft::<f64>::new(n, n).unwrap();
            let spec = st.spectrum(&x).unwrap();
            let win = hann_window::<f64>(n);
            let time: f64 = x.iter().zip(&win).map(|(a, w)| (a * w).powi(2)).sum::<f64>() * n as f64;
            let freq: f64 = spec
                .iter()
                .enumerate()
                .map(|(k, c)| if k == 0 || k == n / 2 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
                .sum();
            assert!((time - freq).abs() <= 1e-6 * time, "n={n}: {time} vs {freq}");
            let brute: f64 = direct_dft(&x.iter().zip(&win).map(|(a, w)| a * w).collect::<Vec<_>>())
                .iter()
                .enumerate()
                .map(|(k, c)| if k == 0 || k == n / 2 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
                .sum();
            assert!((brute - freq).abs() <= 1e-6 * brute);
        }
    }

    #[test]
    fn power_backward_matches_finite_differences() {
        let st = Stft::<f64>::new(16, 4).unwrap();
        let x: Vec<f64> = (0..40).map(|i| ((i * 7 % 11) as f64 / 11.0) - 0.5).collect();
        let spec = st.spectrum(&x).unwrap();
        let g: Vec<f64> = (0..spec.len()).map(|i| ((i % 5) as f64) * 0.1 + 0.05).collect();
        let objective = |x: &[f64]| -> f64 {
            st.spectrum(x).unwrap().iter().zip(&g).map(|(c, &gv)| gv * c.norm_sqr()).sum()
        };
        let mut dx = vec![0.0; x.len()];
        st.power_backward(&spec, &g, &mut dx);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let fd = (objective(&xp) - objective(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-6 * fd.abs().max(1.0), "i={i}: {fd} vs {}", dx[i]);
        }
    }
}
