use super::model::{CodecModel, Unit, OUT_KERNEL, RES_KERNEL, STEM_KERNEL};
use crate::tensor::{BatchStats, Real, Tape, Var};

/// Whether batch norm normalizes with batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// The model's parameters recorded on one tape.
pub struct Bound<'m, F: Real> {
    pub model: &'m CodecModel<F>,
    pub vars: Vec<Var>,
    pub mode: BnMode,
    /// Batch statistics observed in training mode, one per batch-norm layer.
    pub stats: Vec<Option<BatchStats<F>>>,
}

/// Encoder output on the tape.
pub struct Encoded {
    /// `[batch * T_c, latent]`, rows ordered batch-major.
    pub latent: Var,
    /// Pre-stride input of every encoder block, shallowest first.
    pub skips: Vec<Var>,
    pub batch: usize,
    pub positions: usize,
}

fn same_pad(k: usize) -> (usize, usize) {
    ((k - 1) / 2, k - 1 - (k - 1) / 2)
}

/// Padding of a strided convolution with kernel `k` and stride `s`: the
/// output has exactly `len / s` samples when `s` divides `len`.
pub(crate) fn strided_pad(k: usize, s: usize) -> (usize, usize) {
    let total = k - s;
    (total / 2, total - total / 2)
}

impl<'m, F: Real> Bound<'m, F> {
    pub fn new(tape: &mut Tape<F>, model: &'m CodecModel<F>, mode: BnMode, trainable: bool) -> Self {
        Self {
            model,
            vars: model.params.bind(tape, trainable),
            mode,
            stats: vec![None; model.bn.len()],
        }
    }

    fn norm_act(&mut self, tape: &mut Tape<F>, y: Var, u: &Unit) -> Var {
        let eps = F::of_f64(self.model.config.bn_eps);
        let (g, b) = (self.vars[u.gamma], self.vars[u.beta]);
        let y = match self.mode {
            BnMode::Train => {
                let (y, s) = tape.batch_norm_train(y, g, b, eps);
                self.stats[u.bn] = Some(s);
                y
            }
            BnMode::Eval => {
                let st = &self.model.bn[u.bn];
                tape.batch_norm_eval(y, g, b, &st.mean, &st.var, eps)
            }
        };
        tape.prelu(y, self.vars[u.slope])
    }

    fn conv_unit(&mut self, tape: &mut Tape<F>, x: Var, u: &Unit, stride: usize, pad: (usize, usize)) -> Var {
        let y = tape.conv1d(x, self.vars[u.weight], None, stride, pad.0, pad.1);
        self.norm_act(tape, y, u)
    }

    fn res_block(&mut self, tape: &mut Tape<F>, x: Var, units: &[Unit; 3]) -> Var {
        let mut h = x;
        for u in units {
            h = self.conv_unit(tape, h, u, 1, same_pad(RES_KERNEL));
        }
        tape.add(x, h)
    }

    /// `mixture`: `[batch, len]` with `len` a multiple of the fold reduction.
    pub fn encode(&mut self, tape: &mut Tape<F>, mixture: Var) -> Encoded {
        let shape = tape.shape(mixture).to_vec();
        let (batch, len) = (shape[0], shape[1]);
        let model = self.model;
        let (cfg, layout) = (&model.config, &model.layout);
        let x = tape.reshape(mixture, &[batch, 1, len]);
        let mut h = self.conv_unit(tape, x, &layout.stem, 1, same_pad(STEM_KERNEL));
        let mut skips = Vec::with_capacity(cfg.blocks());
        for (i, block) in layout.encoder.iter().enumerate() {
            skips.push(h);
            let (s, k) = (cfg.strides[i], cfg.kernels[i]);
            h = self.conv_unit(tape, h, &block.down, s, strided_pad(k, s));
            h = self.res_block(tape, h, &block.res);
        }
        let positions = tape.shape(h)[2];
        let d = cfg.latent_channels;
        // [B, D, T_c] -> [B, T_c, D]; the LSTM stack is wrapped in a residual
        // connection so the convolutional features reach the latent directly.
        let seq = tape.transpose12(h);
        let mut z = seq;
        for dirs in &layout.lstm {
            let f = tape.lstm(z, self.vars[dirs[0].w_ih], self.vars[dirs[0].w_hh], self.vars[dirs[0].bias], false);
            let b = tape.lstm(z, self.vars[dirs[1].w_ih], self.vars[dirs[1].w_hh], self.vars[dirs[1].bias], true);
            z = tape.concat_last(f, b);
        }
        if !layout.lstm.is_empty() {
            z = tape.add(seq, z);
        }
        let latent = tape.reshape(z, &[batch * positions, d]);
        Encoded {
            latent,
            skips,
            batch,
            positions,
        }
    }

    /// `quantized`: `[batch * T_c, latent]`. Skips are added only when the
    /// configuration enables them and they are supplied. Output
    /// `[batch, n_sources, T_c * f]`.
    pub fn decode(&mut self, tape: &mut Tape<F>, quantized: Var, batch: usize, skips: Option<&[Var]>) -> Var {
        let model = self.model;
        let (cfg, layout) = (&model.config, &model.layout);
        let d = cfg.latent_channels;
        let positions = tape.shape(quantized)[0] / batch;
        let z = tape.reshape(quantized, &[batch, positions, d]);
        let mut h = tape.transpose12(z);
        let mut len = positions;
        let use_skips = cfg.use_skips && skips.is_some();
        for (j, block) in layout.decoder.iter().enumerate() {
            let i = cfg.blocks() - 1 - j;
            let (s, k) = (cfg.strides[i], cfg.kernels[i]);
            h = self.res_block(tape, h, &block.res);
            len *= s;
            let (pad_l, _) = strided_pad(k, s);
            let y = tape.conv_transpose1d(h, self.vars[block.up.weight], None, s, pad_l, len);
            h = self.norm_act(tape, y, &block.up);
            if use_skips {
                let skip = skips.unwrap()[i];
                let p = tape.conv1d(skip, self.vars[block.skip], None, 1, 0, 0);
                h = tape.add(h, p);
            }
        }
        let (pl, pr) = same_pad(OUT_KERNEL);
        tape.conv1d(h, self.vars[layout.out_weight], Some(self.vars[layout.out_bias]), 1, pl, pr)
    }

    /// Every batch-norm layer's statistics; panics unless a training-mode
    /// forward pass has run.
    pub fn take_stats(&mut self) -> Vec<BatchStats<F>> {
        self.stats
            .iter_mut()
            .map(|s| s.take().expect("batch-norm layer did not run in training mode"))
            .collect()
    }
}
