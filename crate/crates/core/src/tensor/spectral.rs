use std::sync::Arc;

use super::{Real, Tape, Var};
use crate::dsp::{MelAnalyzer, N_MELS};
use crate::error::Result;

impl<F: Real> Tape<F> {
    /// Mel power of every row of `x` (`[rows, len]`): `[rows, frames, 64]`.
    pub fn mel_power(&mut self, x: Var, analyzer: &Arc<MelAnalyzer<F>>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "mel_power: expected [rows, len]");
        let (rows, len) = (s[0], s[1]);
        let xv = self.value(x);
        let mut out = Vec::new();
        let mut specs = Vec::with_capacity(rows);
        let mut frames = 0;
        for r in 0..rows {
            let (mel, spec) = analyzer.mel(&xv[r * len..(r + 1) * len])?;
            frames = mel.len() / N_MELS;
            out.extend_from_slice(&mel);
            specs.push(spec);
        }
        let analyzer = Arc::clone(analyzer);
        let fs = frames * N_MELS;
        Ok(self.push_op(out, vec![rows, frames, N_MELS], &[x], move |_, g, acc| {
            if let Some(dx) = acc.slot(x) {
                for (r, spec) in specs.iter().enumerate() {
                    analyzer.backward(spec, &g[r * fs..(r + 1) * fs], &mut dx[r * len..(r + 1) * len]);
                }
            }
        }))
    }
}
