//! The RQ-VAE separator: convolutional encoder with a bidirectional LSTM,
//! residual quantization, and a transposed-convolution decoder with additive
//! skip connections emitting one waveform per source.

mod config;
mod loss;
mod model;
mod network;

pub use config::{CodecConfig, LossConfig};
pub use loss::{reconstruction_loss, reconstruction_loss_tape, LossBreakdown, SpectralLoss};
pub use model::{BnState, CodecModel};
pub use network::{BnMode, Bound, Encoded};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::rvq::{commitment_loss_tape, straight_through, CodeGrid, Quantized};
use crate::tensor::{Real, Tape, Var};
use loss::flat;

/// How the quantizer participates in a training forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Quantization<'a, F: Real> {
    /// Nearest-neighbor search on the current latent.
    Live,
    /// Codes and stop-gradient values fixed at a reference point: the decoder
    /// sees `z_e − z_e⁰ + z_q⁰`, the exact linearization the straight-through
    /// estimator differentiates. Used for finite-difference checks.
    Frozen(&'a Quantized<F>),
}

/// Result of one training-style forward pass.
pub struct ForwardOutput<F: Real> {
    pub total: Var,
    /// `[clips, sources, len]`.
    pub estimates: Var,
    /// `[clips * T_c, latent]`.
    pub latent: Var,
    /// Codebook variables, one per depth.
    pub codebooks: Vec<Var>,
    pub quantized: Quantized<F>,
    pub breakdown: LossBreakdown,
}

/// Encoder output of one clip in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedClip<F> {
    /// `T_c × latent`.
    pub latent: Array2<F>,
    /// Pre-stride activation of each encoder block, `channels × length`.
    pub skips: Vec<Array2<F>>,
}

impl<F: Real> CodecModel<F> {
    fn check_batch(&self, mixture: &Array2<F>) -> Result<()> {
        let len = mixture.ncols();
        self.config.latent_len(len)?;
        if mixture.nrows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if mixture.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture".into()));
        }
        Ok(())
    }

    /// Full training forward pass on `mixture` (`[clips, len]`) against
    /// `targets` (`[clips, sources, len]`), recording everything on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        bound: &mut Bound<'_, F>,
        mixture: &Array2<F>,
        targets: &Array3<F>,
        losses: &LossConfig,
        spectral: &SpectralLoss<F>,
        quant: Quantization<'_, F>,
    ) -> Result<ForwardOutput<F>> {
        self.check_batch(mixture)?;
        let (clips, len) = mixture.dim();
        let n = self.config.n_sources;
        if targets.dim() != (clips, n, len) {
            return Err(Error::Shape(format!(
                "targets {:?} do not match mixture {clips}x{len} with {n} sources",
                targets.dim()
            )));
        }
        let mix = tape.constant(flat(mixture), &[clips, len]);
        let enc = bound.encode(tape, mix);
        let d = self.config.latent_channels;
        let z = Array2::from_shape_vec((clips * enc.positions, d), tape.value(enc.latent).to_vec())
            .expect("latent shape");
        let (q, decoder_in) = match quant {
            Quantization::Live => {
                let q = self.quantizer.quantize(z.view())?;
                let v = q.quantized.clone();
                (q, v)
            }
            Quantization::Frozen(q0) => {
                if q0.quantized.dim() != z.dim() {
                    return Err(Error::Shape("frozen quantization point has another shape".into()));
                }
                let v = &z - &q0.residuals[0] + &q0.quantized;
                (q0.clone(), v)
            }
        };
        let st = straight_through(tape, enc.latent, &decoder_in)?;
        let skips = self.config.use_skips.then_some(enc.skips.as_slice());
        let est = bound.decode(tape, st, clips, skips);
        let rows = tape.reshape(est, &[clips * n, len]);
        let tgt = tape.constant(flat(targets), &[clips * n, len]);

        let l_spec = spectral.on_tape(tape, tgt, rows, clips)?;
        let l_rec = reconstruction_loss_tape(tape, tgt, rows, clips)?;
        let books: Vec<Var> = self
            .quantizer
            .codebooks
            .iter()
            .map(|c| tape.leaf(flat(&c.vectors), &[c.size(), c.dim()]))
            .collect();
        let l_comm = commitment_loss_tape(tape, enc.latent, &books, &q, self.quantizer.beta, losses.commit_third_term)?;

        let breakdown = LossBreakdown::new(
            tape.scalar(l_spec).as_f64(),
            tape.scalar(l_rec).as_f64(),
            tape.scalar(l_comm).as_f64(),
            losses,
        );
        let a = tape.scale(l_spec, F::of_f64(losses.w_spec));
        let b = tape.scale(l_rec, F::of_f64(losses.w_rec));
        let c = tape.scale(l_comm, F::of_f64(losses.w_comm));
        let ab = tape.add(a, b);
        let total = tape.add(ab, c);
        Ok(ForwardOutput {
            total,
            estimates: est,
            latent: enc.latent,
            codebooks: books,
            quantized: q,
            breakdown,
        })
    }

    /// Inference-mode encoder pass over a batch of clips.
    pub fn encode_batch(&self, mixture: &Array2<F>) -> Result<Vec<EncodedClip<F>>> {
        self.check_batch(mixture)?;
        let (clips, len) = mixture.dim();
        let mut tape = Tape::new();
        let mut bound = Bound::new(&mut tape, self, BnMode::Eval, false);
        let mix = tape.constant(flat(mixture), &[clips, len]);
        let enc = bound.encode(&mut tape, mix);
        let d = self.config.latent_channels;
        let lat = tape.value(enc.latent);
        let per = enc.positions * d;
        Ok((0..clips)
            .map(|c| EncodedClip {
                latent: Array2::from_shape_vec((enc.positions, d), lat[c * per..(c + 1) * per].to_vec())
                    .expect("latent shape"),
                skips: enc
                    .skips
                    .iter()
                    .map(|&s| {
                        let sh = tape.shape(s);
                        let (ch, l) = (sh[1], sh[2]);
                        let v = &tape.value(s)[c * ch * l..(c + 1) * ch * l];
                        Array2::from_shape_vec((ch, l), v.to_vec()).expect("skip shape")
                    })
                    .collect(),
            })
            .collect())
    }

    /// Inference-mode encoding of a single clip.
    pub fn encode(&self, mixture: &[F]) -> Result<EncodedClip<F>> {
        let m = Array2::from_shape_vec((1, mixture.len()), mixture.to_vec()).expect("row");
        Ok(self.encode_batch(&m)?.remove(0))
    }

    /// Inference-mode decoding of quantized latents (`[clips][T_c × latent]`).
    /// Skips are used only when given and enabled in the configuration.
    /// Returns `[clips, sources, T_c * f]`.
    pub fn decode_batch(&self, quantized: &[Array2<F>], skips: Option<&[Vec<Array2<F>>]>) -> Result<Array3<F>> {
        let clips = quantized.len();
        if clips == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let (positions, d) = quantized[0].dim();
        if d != self.config.latent_channels || quantized.iter().any(|q| q.dim() != (positions, d)) {
            return Err(Error::Shape(format!(
                "decoder expects {}-channel latents of equal length",
                self.config.latent_channels
            )));
        }
        let mut tape = Tape::new();
        let mut bound = Bound::new(&mut tape, self, BnMode::Eval, false);
        let data: Vec<F> = quantized.iter().flat_map(|q| flat(q)).collect();
        let qv = tape.constant(data, &[clips * positions, d]);
        let skip_vars = match skips {
            Some(s) if self.config.use_skips => {
                if s.len() != clips || s.iter().any(|v| v.len() != self.config.blocks()) {
                    return Err(Error::Shape("one skip set per clip, one activation per block".into()));
                }
                let mut vars = Vec::with_capacity(self.config.blocks());
                let mut len = positions * self.config.fold();
                for i in 0..self.config.blocks() {
                    let ch = self.config.channels(i);
                    if s.iter().any(|v| v[i].dim() != (ch, len)) {
                        return Err(Error::Shape(format!("skip {i} must be {ch}x{len}")));
                    }
                    let data: Vec<F> = s.iter().flat_map(|v| flat(&v[i])).collect();
                    vars.push(tape.constant(data, &[clips, ch, len]));
                    len /= self.config.strides[i];
                }
                Some(vars)
            }
            _ => None,
        };
        let est = bound.decode(&mut tape, qv, clips, skip_vars.as_deref());
        let len = positions * self.config.fold();
        Ok(Array3::from_shape_vec((clips, self.config.n_sources, len), tape.value(est).to_vec())
            .expect("decoder output shape"))
    }

    /// Inference-mode decoding of one clip: `sources × (T_c * f)`.
    pub fn decode(&self, quantized: &Array2<F>, skips: Option<&[Array2<F>]>) -> Result<Array2<F>> {
        let s = skips.map(|s| vec![s.to_vec()]);
        let out = self.decode_batch(std::slice::from_ref(quantized), s.as_deref())?;
        Ok(out.index_axis_move(ndarray::Axis(0), 0))
    }

    /// Decodes a code grid without skips, as when generating.
    pub fn decode_grid(&self, grid: &CodeGrid) -> Result<Array2<F>> {
        let q = self.quantizer.dequantize(grid)?;
        self.decode(&q, None)
    }

    /// Separates a batch of mixtures (`[clips, len]`) into
    /// `[clips, sources, len]` estimates in inference mode.
    pub fn separate_batch(&self, mixture: &Array2<F>) -> Result<Array3<F>> {
        let enc = self.encode_batch(mixture)?;
        let mut quantized = Vec::with_capacity(enc.len());
        for e in &enc {
            quantized.push(self.quantizer.quantize(e.latent.view())?.quantized);
        }
        let skips: Vec<Vec<Array2<F>>> = enc.into_iter().map(|e| e.skips).collect();
        self.decode_batch(&quantized, Some(&skips))
    }

    /// Code grid of one clip.
    pub fn encode_grid(&self, mixture: &[F]) -> Result<CodeGrid> {
        let e = self.encode(mixture)?;
        Ok(self.quantizer.quantize(e.latent.view())?.grid)
    }
}

#[cfg(test)]
mod tests;
