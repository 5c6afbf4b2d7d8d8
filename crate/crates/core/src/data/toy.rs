//! Deterministic synthetic four-instrument dataset.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::write_manifest;
use super::wav::{encode_wav, to_pcm16};
use super::DEFAULT_STEMS;
use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Peak of the mixture as written; leaves room for PCM rounding.
const WRITE_PEAK: f64 = 0.9;

/// Track directories of each split, as written to disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<PathBuf>,
    pub validation: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

impl DatasetSplit {
    pub fn manifest_path(root: &Path, split: &str) -> PathBuf {
        root.join(format!("{split}.txt"))
    }
}

/// Split sizes `(train, validation, test)` for the 70/15/15 ratio, each at least one.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let v = ((n as f64 * 0.15).round() as usize).max(1);
    let t = ((n as f64 * 0.15).round() as usize).max(1);
    (n - v - t, v, t)
}

fn midi_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

struct Track {
    rate: f64,
    len: usize,
    step: usize,
}

impl Track {
    fn env(&self, i: usize, dur: usize, decay: f64) -> f64 {
        let attack = (0.005 * self.rate) as usize;
        let t = i as f64 / self.rate;
        let a = if i < attack { i as f64 / attack as f64 } else { 1.0 };
        let release = (0.01 * self.rate) as usize;
        let r = if i + release > dur { (dur - i) as f64 / release as f64 } else { 1.0 };
        a * r * (-t / decay).exp()
    }

    /// Square-wave bass line, one note per two steps, gently low-passed.
    fn bass(&self, rng: &mut ChaCha8Rng, root: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        let scale = [0.0, 3.0, 5.0, 7.0, 10.0, 12.0];
        let dur = 2 * self.step;
        let mut start = 0;
        while start < self.len {
            let f = midi_hz(root + scale[rng.gen_range(0..scale.len())]);
            let n = dur.min(self.len - start);
            for i in 0..n {
                let ph = (f * i as f64 / self.rate).fract();
                let sq = if ph < 0.5 { 1.0 } else { -1.0 };
                out[start + i] = 0.25 * sq * self.env(i, n, 0.6);
            }
            start += dur;
        }
        let a = (-2.0 * PI * 600.0 / self.rate).exp();
        let mut y = 0.0;
        for v in out.iter_mut() {
            y = (1.0 - a) * *v + a * y;
            *v = y;
        }
        out
    }

    /// Sine melody, one note per step with occasional rests.
    fn piano(&self, rng: &mut ChaCha8Rng, root: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        let scale = [0.0, 2.0, 4.0, 7.0, 9.0, 12.0, 14.0, 16.0];
        let mut start = 0;
        while start < self.len {
            let n = self.step.min(self.len - start);
            if rng.gen_bool(0.85) {
                let f = midi_hz(root + 24.0 + scale[rng.gen_range(0..scale.len())]);
                for i in 0..n {
                    out[start + i] = 0.3 * (2.0 * PI * f * i as f64 / self.rate).sin() * self.env(i, n, 0.35);
                }
            }
            start += self.step;
        }
        out
    }

    /// Band-limited sawtooth triads, one chord per eight steps.
    fn guitar(&self, rng: &mut ChaCha8Rng, root: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        let degrees = [0.0, 5.0, 7.0, 9.0];
        let dur = 8 * self.step;
        let nyq = self.rate / 2.0;
        let mut start = 0;
        while start < self.len {
            let base = root + 12.0 + degrees[rng.gen_range(0..degrees.len())];
            let third = if rng.gen_bool(0.5) { 3.0 } else { 4.0 };
            let n = dur.min(self.len - start);
            for note in [base, base + third, base + 7.0] {
                let f = midi_hz(note);
                let harmonics: Vec<f64> = (1..=10).map(|k| k as f64).filter(|k| k * f < nyq).collect();
                for i in 0..n {
                    let t = i as f64 / self.rate;
                    let s: f64 = harmonics.iter().map(|k| (2.0 * PI * k * f * t).sin() / k).sum();
                    out[start + i] += 0.06 * s * self.env(i, n, 2.0);
                }
            }
            start += dur;
        }
        out
    }

    /// Noise drums: low-passed kicks, band-passed snares and high-passed hats.
    fn drums(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        let lp = |fc: f64| (-2.0 * PI * fc / self.rate).exp();
        let steps = self.len.div_ceil(self.step);
        for s in 0..steps {
            let start = s * self.step;
            let n = (2 * self.step).min(self.len - start);
            let beat = s % 8;
            let (kind, gain) = match beat {
                0 | 4 => (0, 0.9),
                2 | 6 => (1, 0.5),
                _ => (2, 0.25),
            };
            if kind == 2 && !rng.gen_bool(0.8) {
                continue;
            }
            let (decay, a_lo, a_hi) = match kind {
                0 => (0.06, lp(120.0), 0.0),
                1 => (0.09, lp(2500.0), lp(600.0)),
                _ => (0.025, 0.0, lp(5000.0)),
            };
            let (mut lo, mut hi) = (0.0, 0.0);
            for i in 0..n {
                let w: f64 = rng.gen_range(-1.0..1.0);
                lo = (1.0 - a_lo) * w + a_lo * lo;
                hi = (1.0 - a_hi) * w + a_hi * hi;
                let v = match kind {
                    0 => lo * 4.0,
                    1 => lo - hi,
                    _ => w - hi,
                };
                out[start + i] += gain * v * self.env(i, n, decay);
            }
        }
        out
    }
}

/// Renders the four stems of track `index` at `sample_rate`.
pub fn render_toy_track(seed: u64, index: u64, seconds: f64, sample_rate: u32) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let bpm: f64 = rng.gen_range(90.0..140.0);
    let rate = sample_rate as f64;
    let track = Track {
        rate,
        len: (seconds * rate).round() as usize,
        step: (rate * 30.0 / bpm).round() as usize,
    };
    let root = 33.0 + rng.gen_range(0..8) as f64;
    let bass = track.bass(&mut rng, root);
    let drums = track.drums(&mut rng);
    let guitar = track.guitar(&mut rng, root + 12.0);
    let piano = track.piano(&mut rng, root + 24.0);
    vec![bass, drums, guitar, piano]
}

/// Writes `n_tracks` toy tracks under `out_dir` as `track_XXX/stems/<name>.wav`
/// plus `track_XXX/mix.wav`, and one manifest per split.
pub fn make_toy_dataset(n_tracks: usize, seconds: f64, seed: u64, out_dir: &Path, sample_rate: u32) -> Result<DatasetSplit> {
    if n_tracks < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 tracks, got {n_tracks}")));
    }
    if !(seconds > 0.0) {
        return Err(Error::InvalidInput("track length must be positive".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut dirs = Vec::with_capacity(n_tracks);
    for t in 0..n_tracks {
        let stems = render_toy_track(seed, t as u64, seconds, sample_rate);
        let len = stems[0].len();
        let peak = (0..len)
            .map(|i| stems.iter().map(|s| s[i]).sum::<f64>().abs())
            .fold(0.0, f64::max);
        let gain = if peak > 0.0 { WRITE_PEAK / peak } else { 1.0 };
        let dir = out_dir.join(format!("track_{t:03}"));
        let stem_dir = dir.join("stems");
        std::fs::create_dir_all(&stem_dir).map_err(|e| Error::io(&stem_dir, e))?;
        let mut mix = vec![0i32; len];
        for (name, s) in DEFAULT_STEMS.iter().zip(&stems) {
            let pcm: Vec<i16> = s.iter().map(|&v| to_pcm16((v * gain) as f32)).collect();
            for (m, &p) in mix.iter_mut().zip(&pcm) {
                *m += p as i32;
            }
            let w = Waveform::new(pcm.iter().map(|&p| p as f32 / 32768.0).collect(), sample_rate)?;
            let path = stem_dir.join(format!("{name}.wav"));
            std::fs::write(&path, encode_wav(&w)).map_err(|e| Error::io(&path, e))?;
        }
        let mixw = Waveform::new(mix.iter().map(|&p| p.clamp(-32768, 32767) as f32 / 32768.0).collect(), sample_rate)?;
        let path = dir.join("mix.wav");
        std::fs::write(&path, encode_wav(&mixw)).map_err(|e| Error::io(&path, e))?;
        dirs.push(PathBuf::from(format!("track_{t:03}")));
    }
    let (n_train, n_val, _) = split_sizes(n_tracks);
    let split = DatasetSplit {
        train: dirs[..n_train].to_vec(),
        validation: dirs[n_train..n_train + n_val].to_vec(),
        test: dirs[n_train + n_val..].to_vec(),
    };
    for (name, list) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        write_manifest(&DatasetSplit::manifest_path(out_dir, name), list)?;
    }
    Ok(split)
}


#[cfg(test)]
mod overlap {
    use super::*;

    fn avg_spectrum(x: &[f64], rate: u32) -> Vec<f64> {
        let w = Waveform::new(x.iter().map(|&v| v as f32).collect(), rate).unwrap();
        let s = crate::dsp::stft(&w, 1024, 512).unwrap();
        s.columns().into_iter().map(|c| c.iter().map(|v| v.norm()).sum::<f64>()).collect()
    }

    #[test]
    fn instrument_spectra_are_distinct() {
        for seed in [1, 7] {
            let stems = render_toy_track(seed, 3, 4.0, 22050);
            let specs: Vec<Vec<f64>> = stems.iter().map(|s| avg_spectrum(s, 22050)).collect();
            for i in 0..4 {
                for j in i + 1..4 {
                    let dot: f64 = specs[i].iter().zip(&specs[j]).map(|(a, b)| a * b).sum();
                    let na: f64 = specs[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                    let nb: f64 = specs[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                    let cos = dot / (na * nb);
                    assert!(cos < 0.8, "stems {i},{j}: cosine {cos}");
                }
            }
        }
    }
}
