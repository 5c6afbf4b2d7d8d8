use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Aggregated SI-SDRi of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean SI-SDRi per stem; `None` when the stem was never active.
    pub per_stem: Vec<(String, Option<f64>)>,
    /// Chunks contributing to each stem.
    pub stem_chunks: Vec<usize>,
    /// Mean of the available per-stem values.
    pub all_mean: Option<f64>,
    /// Chunks that passed the activity filter.
    pub chunks: usize,
}

impl EvalReport {
    pub fn new(per_stem: Vec<(String, Option<f64>)>, stem_chunks: Vec<usize>, chunks: usize) -> Self {
        let vals: Vec<f64> = per_stem.iter().filter_map(|(_, v)| *v).collect();
        let all_mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        Self {
            per_stem,
            stem_chunks,
            all_mean,
            chunks,
        }
    }

    pub fn stem(&self, name: &str) -> Option<f64> {
        self.per_stem.iter().find(|(n, _)| n == name).and_then(|(_, v)| *v)
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>10} {:>8}", "stem", "SI-SDRi", "chunks");
        for ((name, v), n) in self.per_stem.iter().zip(&self.stem_chunks) {
            let _ = writeln!(s, "{:<12} {:>10} {:>8}", name, fmt(*v), n);
        }
        let _ = writeln!(s, "{:<12} {:>10} {:>8}", "all", fmt(self.all_mean), self.chunks);
        s
    }

    /// One `key=value` pair per line.
    pub fn key_values(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v}"));
        let mut s = String::new();
        for ((name, v), n) in self.per_stem.iter().zip(&self.stem_chunks) {
            let _ = writeln!(s, "si_sdri.{name}={}", fmt(*v));
            let _ = writeln!(s, "chunks.{name}={n}");
        }
        let _ = writeln!(s, "si_sdri.all={}", fmt(self.all_mean));
        let _ = writeln!(s, "chunks={}", self.chunks);
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.key_values()).map_err(|e| Error::io(path, e))
    }
}
