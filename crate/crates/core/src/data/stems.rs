use std::path::Path;

use super::wav::read_wav;
use crate::dsp::{resample, Waveform};
use crate::error::{Error, Result};

/// Default stem names, in order.
pub const DEFAULT_STEMS: [&str; 4] = ["bass", "drums", "guitar", "piano"];

/// Target peak of the mixture after loading.
pub const PEAK: f32 = 0.95;

/// Named, aligned stems and their mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct StemSet {
    names: Vec<String>,
    stems: Vec<Waveform>,
    mixture: Waveform,
}

impl StemSet {
    /// Builds a set whose mixture is the sample-wise sum of `stems`.
    pub fn new(names: Vec<String>, stems: Vec<Waveform>) -> Result<Self> {
        if names.is_empty() || names.len() != stems.len() {
            return Err(Error::InvalidInput(format!("{} names for {} stems", names.len(), stems.len())));
        }
        let len = stems[0].len();
        let rate = stems[0].sample_rate();
        if stems.iter().any(|s| s.len() != len || s.sample_rate() != rate) {
            return Err(Error::Shape("stems differ in length or sample rate".into()));
        }
        let mut mix = vec![0.0f32; len];
        for s in &stems {
            for (m, &v) in mix.iter_mut().zip(s.samples()) {
                *m += v;
            }
        }
        Ok(Self {
            names,
            stems,
            mixture: Waveform::new(mix, rate)?,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn stems(&self) -> &[Waveform] {
        &self.stems
    }

    pub fn stem(&self, name: &str) -> Option<&Waveform> {
        self.names.iter().position(|n| n == name).map(|i| &self.stems[i])
    }

    pub fn mixture(&self) -> &Waveform {
        &self.mixture
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.mixture.sample_rate()
    }

    /// Aligned window `[start, start + len)` of every stem and the mixture.
    pub fn window(&self, start: usize, len: usize) -> StemSet {
        StemSet {
            names: self.names.clone(),
            stems: self.stems.iter().map(|s| s.slice(start, len)).collect(),
            mixture: self.mixture.slice(start, len),
        }
    }

    /// Multiplies stems and mixture by `gain`.
    pub fn scaled(mut self, gain: f32) -> StemSet {
        for w in self.stems.iter_mut().chain(std::iter::once(&mut self.mixture)) {
            for v in w.samples_mut() {
                *v *= gain;
            }
        }
        self
    }

    /// Scales everything so the mixture peak is [`PEAK`]. Silent sets are
    /// returned unchanged.
    pub fn peak_normalized(self) -> StemSet {
        let peak = self.mixture.samples().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return self;
        }
        let gain = PEAK / peak;
        self.scaled(gain)
    }
}

/// Loads `<dir>/stems/<name>.wav` for every name, resamples to
/// `sample_rate`, truncates to the shortest stem and peak-normalizes.
pub fn load_track(dir: &Path, names: &[String], sample_rate: u32) -> Result<StemSet> {
    let mut stems = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join("stems").join(format!("{name}.wav"));
        if !path.is_file() {
            return Err(Error::MissingStem {
                name: name.clone(),
                path,
            });
        }
        stems.push(resample(&read_wav(&path)?, sample_rate)?);
    }
    let len = stems.iter().map(Waveform::len).min().unwrap_or(0);
    let stems = stems.into_iter().map(|s| s.slice(0, len)).collect();
    Ok(StemSet::new(names.to_vec(), stems)?.peak_normalized())
}

/// Start offsets of every full window of `size` advancing by `hop`.
pub fn chunk_offsets(len: usize, size: usize, hop: usize) -> Vec<usize> {
    if size == 0 || hop == 0 || len < size {
        return Vec::new();
    }
    (0..=(len - size) / hop).map(|i| i * hop).collect()
}

/// Aligned windows of `seconds` every `hop_seconds`; the partial tail is dropped.
pub fn chunk(track: &StemSet, seconds: f64, hop_seconds: f64) -> Result<Vec<StemSet>> {
    if !(hop_seconds > 0.0) || !(seconds > 0.0) {
        return Err(Error::InvalidInput("chunk length and hop must be positive".into()));
    }
    let rate = track.sample_rate() as f64;
    let size = (seconds * rate).round() as usize;
    let hop = (hop_seconds * rate).round() as usize;
    Ok(chunk_offsets(track.len(), size, hop)
        .into_iter()
        .map(|o| track.window(o, size))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        DEFAULT_STEMS.iter().map(|s| s.to_string()).collect()
    }

    fn set(len: usize) -> StemSet {
        let stems = (0..4)
            .map(|k| Waveform::new((0..len).map(|i| ((i * (k + 1)) as f32 * 0.01).sin() * 0.2).collect(), 100).unwrap())
            .collect();
        StemSet::new(names(), stems).unwrap()
    }

    #[test]
    fn ten_second_track_gives_four_chunks() {
        assert_eq!(chunk_offsets(1000, 400, 200), vec![0, 200, 400, 600]);
        let c = chunk(&set(1000), 4.0, 2.0).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(chunk(&set(1000), 4.0, 4.0).unwrap().len(), 2);
        assert!(chunk(&set(1000), 4.0, 0.0).is_err());
        assert!(chunk_offsets(399, 400, 200).is_empty());
    }

    #[test]
    fn chunks_keep_the_mixture_sum() {
        for c in chunk(&set(1000), 4.0, 2.0).unwrap() {
            for i in 0..c.len() {
                let s: f32 = c.stems().iter().map(|w| w.samples()[i]).sum();
                assert!((s - c.mixture().samples()[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalization_hits_peak_and_keeps_sum() {
        let n = set(500).scaled(7.0).peak_normalized();
        let peak = n.mixture().samples().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - PEAK).abs() < 1e-6);
        for i in 0..n.len() {
            let s: f32 = n.stems().iter().map(|w| w.samples()[i]).sum();
            assert!((s - n.mixture().samples()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_stems_are_rejected() {
        let a = Waveform::zeros(10, 100);
        let b = Waveform::zeros(11, 100);
        assert!(StemSet::new(vec!["a".into(), "b".into()], vec![a, b]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn chunk_offsets_tile_the_track(len in 0usize..5000, size in 1usize..600, hop in 1usize..600) {
                let offs = chunk_offsets(len, size, hop);
                let want = if len < size { 0 } else { (len - size) / hop + 1 };
                prop_assert_eq!(offs.len(), want);
                prop_assert!(offs.iter().all(|&o| o + size <= len && o % hop == 0));
                if let Some(&last) = offs.last() {
                    prop_assert!(last + hop + size > len);
                }
            }
        }
    }
}
