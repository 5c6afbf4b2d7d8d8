//! Scale-invariant SDR, its improvement over the mixture, and the chunked
//! evaluation protocol.

mod dd;
mod report;

pub use report::EvalReport;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{chunk_offsets, StemSet};
use crate::error::{Error, Result};

/// Upper and lower clamp of every SI-SDR value, in dB.
pub const CLAMP_DB: f64 = 100.0;

/// Anything that maps a batch of mixtures (`[clips, len]`) to per-source
/// estimates (`[clips, sources, len]`).
pub trait Separator {
    fn separate(&self, mixtures: &Array2<f32>) -> Result<Array3<f32>>;
}

impl Separator for crate::codec::CodecModel<f32> {
    fn separate(&self, mixtures: &Array2<f32>) -> Result<Array3<f32>> {
        self.separate_batch(mixtures)
    }
}

/// Scale-invariant signal-to-distortion ratio in dB.
///
/// With `α = ⟨e, r⟩ / ‖r‖²` this is `10 log₁₀(‖αr‖² / ‖αr − e‖²)`, evaluated
/// as `⟨e,r⟩² / (‖e‖²‖r‖² − ⟨e,r⟩²)` in double-double arithmetic so that
/// rescaling the estimate leaves the result unchanged. Clamped to ±100 dB;
/// the upper clamp applies once the error energy drops below `1e-12` of the
/// projected signal energy.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.iter().chain(estimate).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("si_sdr input".into()));
    }
    let rr = dd::dot(reference, reference);
    if rr.hi == 0.0 {
        return Err(Error::InvalidInput("si_sdr reference is all zeros".into()));
    }
    let er = dd::dot(estimate, reference);
    let ee = dd::dot(estimate, estimate);
    let num = er.mul(er);
    let den = ee.mul(rr).sub(num);
    if num.hi == 0.0 {
        return Ok(-CLAMP_DB);
    }
    if den.hi <= 1e-12 * num.hi {
        return Ok(CLAMP_DB);
    }
    let ratio = num.div(den);
    Ok((10.0 * ratio.log10()).clamp(-CLAMP_DB, CLAMP_DB))
}

/// `si_sdr(reference, estimate) − si_sdr(reference, mixture)`.
pub fn si_sdri(reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_sdr(reference, estimate)? - si_sdr(reference, mixture)?)
}

/// Chunking and activity settings of the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub chunk_seconds: f64,
    /// Distance between consecutive chunk starts.
    pub hop_seconds: f64,
    /// A stem is active in a chunk when its RMS exceeds this.
    pub activity_threshold: f64,
    /// Minimum number of active stems for a chunk to count.
    pub min_active: usize,
    /// Chunks separated per model call.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            chunk_seconds: 4.0,
            hop_seconds: 2.0,
            activity_threshold: 1e-4,
            min_active: 2,
            batch_size: 8,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.chunk_seconds > 0.0) || !(self.hop_seconds > 0.0) {
            return Err(Error::config("eval.chunk_seconds", "chunk and hop must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("eval.batch_size", "must be positive"));
        }
        Ok(())
    }
}

fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64).sqrt()
}

struct Pending {
    mixture: Vec<f32>,
    stems: Vec<Vec<f32>>,
    active: Vec<bool>,
}

/// Runs the chunked protocol over `tracks` in order: every window of
/// `chunk_seconds` advancing by `hop_seconds` with at least `min_active`
/// active stems is separated, and each active stem's SI-SDRi is recorded.
/// Per-stem values are averaged over chunks, then the stem means are averaged.
pub fn evaluate(model: &dyn Separator, tracks: &[StemSet], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let names = match tracks.first() {
        Some(t) => t.names().to_vec(),
        None => return Ok(EvalReport::new(Vec::new(), Vec::new(), 0)),
    };
    let mut sums = vec![0.0; names.len()];
    let mut counts = vec![0usize; names.len()];
    let mut chunks = 0usize;
    for (ti, track) in tracks.iter().enumerate() {
        if track.names() != names.as_slice() {
            return Err(Error::InvalidInput(format!("track {ti} has a different stem set")));
        }
        let rate = track.sample_rate() as f64;
        let size = (cfg.chunk_seconds * rate).round() as usize;
        let hop = (cfg.hop_seconds * rate).round() as usize;
        let offsets = chunk_offsets(track.len(), size, hop);
        if offsets.is_empty() {
            log::warn!("track {ti} ({} samples) is shorter than one chunk; skipped", track.len());
            continue;
        }
        let mut pending = Vec::new();
        for off in offsets {
            let stems: Vec<Vec<f32>> = track
                .stems()
                .iter()
                .map(|w| w.samples()[off..off + size].to_vec())
                .collect();
            let active: Vec<bool> = stems.iter().map(|s| rms(s) > cfg.activity_threshold).collect();
            if active.iter().filter(|&&a| a).count() < cfg.min_active {
                continue;
            }
            pending.push(Pending {
                mixture: track.mixture().samples()[off..off + size].to_vec(),
                stems,
                active,
            });
        }
        for batch in pending.chunks(cfg.batch_size) {
            let flat: Vec<f32> = batch.iter().flat_map(|p| p.mixture.iter().copied()).collect();
            let mix = Array2::from_shape_vec((batch.len(), size), flat).expect("batch shape");
            let est = model.separate(&mix)?;
            if est.dim() != (batch.len(), names.len(), size) {
                return Err(Error::Shape(format!(
                    "separator returned {:?}, expected {:?}",
                    est.dim(),
                    (batch.len(), names.len(), size)
                )));
            }
            for (c, p) in batch.iter().enumerate() {
                chunks += 1;
                let mix64: Vec<f64> = p.mixture.iter().map(|&v| v as f64).collect();
                for (s, stem) in p.stems.iter().enumerate() {
                    if !p.active[s] {
                        continue;
                    }
                    let r: Vec<f64> = stem.iter().map(|&v| v as f64).collect();
                    let e: Vec<f64> = est.slice(ndarray::s![c, s, ..]).iter().map(|&v| v as f64).collect();
                    sums[s] += si_sdri(&r, &e, &mix64)?;
                    counts[s] += 1;
                }
            }
        }
    }
    let per_stem: Vec<(String, Option<f64>)> = names
        .iter()
        .zip(sums.iter().zip(&counts))
        .map(|(n, (&s, &c))| (n.clone(), (c > 0).then(|| s / c as f64)))
        .collect();
    Ok(EvalReport::new(per_stem, counts, chunks))
}
