use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::CodecConfig;
use crate::error::Result;
use crate::rvq::{QuantizerSettings, ResidualQuantizer};
use crate::tensor::{BatchStats, ParamSet, Real};

/// Parameter indices of a convolution followed by batch norm and PReLU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Unit {
    pub weight: usize,
    pub gamma: usize,
    pub beta: usize,
    pub slope: usize,
    /// Index into [`CodecModel::bn`].
    pub bn: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncoderBlock {
    pub down: Unit,
    pub res: [Unit; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DecoderBlock {
    pub res: [Unit; 3],
    pub up: Unit,
    pub skip: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LstmParams {
    pub w_ih: usize,
    pub w_hh: usize,
    pub bias: usize,
}

/// Where every tensor of the network lives inside the [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub stem: Unit,
    pub encoder: Vec<EncoderBlock>,
    /// `[forward, backward]` per layer.
    pub lstm: Vec<[LstmParams; 2]>,
    /// Decoder blocks in execution order (deepest first).
    pub decoder: Vec<DecoderBlock>,
    pub out_weight: usize,
    pub out_bias: usize,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<F> {
    pub name: String,
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

/// Encoder/decoder parameters, batch-norm statistics, and the quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel<F: Real> {
    pub config: CodecConfig,
    pub params: ParamSet<F>,
    pub bn: Vec<BnState<F>>,
    pub quantizer: ResidualQuantizer<F>,
    pub(crate) layout: Layout,
}

pub(crate) const OUT_KERNEL: usize = 7;
pub(crate) const RES_KERNEL: usize = 3;
pub(crate) const STEM_KERNEL: usize = 3;

struct Builder<'a, F: Real, R: Rng> {
    params: ParamSet<F>,
    bn: Vec<BnState<F>>,
    rng: &'a mut R,
    prelu: f64,
}

impl<F: Real, R: Rng> Builder<'_, F, R> {
    fn conv(&mut self, name: &str, shape: [usize; 3], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.params.push_uniform(name, &shape, bound, self.rng)
    }

    fn unit(&mut self, name: &str, shape: [usize; 3], transposed: bool) -> Unit {
        let (c_out, fan_in) = if transposed {
            (shape[1], shape[0] * shape[2])
        } else {
            (shape[0], shape[1] * shape[2])
        };
        let weight = self.conv(&format!("{name}.weight"), shape, fan_in);
        let gamma = self.params.push_const(format!("{name}.bn.gamma"), &[c_out], 1.0);
        let beta = self.params.push_const(format!("{name}.bn.beta"), &[c_out], 0.0);
        let slope = self.params.push_const(format!("{name}.prelu"), &[c_out], self.prelu);
        self.bn.push(BnState {
            name: format!("{name}.bn"),
            mean: vec![F::zero(); c_out],
            var: vec![F::one(); c_out],
        });
        Unit {
            weight,
            gamma,
            beta,
            slope,
            bn: self.bn.len() - 1,
        }
    }

    fn res_block(&mut self, name: &str, c: usize) -> [Unit; 3] {
        [0, 1, 2].map(|j| self.unit(&format!("{name}.res{j}"), [c, c, RES_KERNEL], false))
    }
}

impl<F: Real> CodecModel<F> {
    /// Freshly initialized model. Convolution and LSTM weights are uniform in
    /// `±1/sqrt(fan_in)`; codebooks are uniform in `±1/sqrt(dim)` until a
    /// k-means initialization replaces them.
    pub fn new(config: CodecConfig, quantizer: &QuantizerSettings, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamSet::new(),
            bn: Vec::new(),
            rng: &mut rng,
            prelu: config.prelu_init,
        };
        let c0 = config.base_channels;
        let stem = b.unit("enc.stem", [c0, 1, STEM_KERNEL], false);
        let mut encoder = Vec::new();
        for (i, &k) in config.kernels.iter().enumerate() {
            let (ci, co) = (config.channels(i), config.channels(i + 1));
            let down = b.unit(&format!("enc.block{i}.down"), [co, ci, k], false);
            let res = b.res_block(&format!("enc.block{i}"), co);
            encoder.push(EncoderBlock { down, res });
        }
        let d = config.latent_channels;
        let h = d / 2;
        let mut lstm = Vec::new();
        for l in 0..config.lstm_layers {
            let bound = 1.0 / (h as f64).sqrt();
            let dirs = ["fwd", "bwd"].map(|dir| {
                let name = format!("enc.lstm{l}.{dir}");
                LstmParams {
                    w_ih: b.params.push_uniform(format!("{name}.w_ih"), &[4 * h, d], bound, b.rng),
                    w_hh: b.params.push_uniform(format!("{name}.w_hh"), &[4 * h, h], bound, b.rng),
                    bias: b.params.push_uniform(format!("{name}.bias"), &[4 * h], bound, b.rng),
                }
            });
            lstm.push(dirs);
        }
        let mut decoder = Vec::new();
        for i in (0..config.blocks()).rev() {
            let (ci, co) = (config.channels(i + 1), config.channels(i));
            let res = b.res_block(&format!("dec.block{i}"), ci);
            let up = b.unit(&format!("dec.block{i}.up"), [ci, co, config.kernels[i]], true);
            let skip = b.conv(&format!("dec.block{i}.skip.weight"), [co, co, 1], co);
            decoder.push(DecoderBlock { res, up, skip });
        }
        let out_weight = b.conv("dec.out.weight", [config.n_sources, c0, OUT_KERNEL], c0 * OUT_KERNEL);
        let out_bias = b.params.push_const("dec.out.bias", &[config.n_sources], 0.0);
        let (params, bn) = (b.params, b.bn);

        let settings = QuantizerSettings {
            dim: d,
            ..*quantizer
        };
        let q = ResidualQuantizer::random(&settings, 1.0 / (d as f64).sqrt(), &mut rng);
        Ok(Self {
            config,
            params,
            bn,
            quantizer: q,
            layout: Layout {
                stem,
                encoder,
                lstm,
                decoder,
                out_weight,
                out_bias,
            },
        })
    }

    /// Folds one training batch's statistics into the running estimates
    /// (`running <- (1 - m) running + m batch`, unbiased batch variance).
    pub fn update_bn(&mut self, stats: &[BatchStats<F>]) {
        assert_eq!(stats.len(), self.bn.len(), "one statistics record per batch-norm layer");
        let m = F::of_f64(self.config.bn_momentum);
        let keep = F::one() - m;
        for (state, s) in self.bn.iter_mut().zip(stats) {
            let n = s.count as f64;
            let unbias = F::of_f64(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
            for (r, &b) in state.mean.iter_mut().zip(&s.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in state.var.iter_mut().zip(&s.var) {
                *r = keep * *r + m * b * unbias;
            }
        }
    }

    /// Same architecture and state in another element type.
    pub fn cast<G: Real>(&self) -> CodecModel<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::of_f64(x.as_f64())).collect::<Vec<G>>();
        CodecModel {
            config: self.config.clone(),
            params: self.params.cast(),
            bn: self
                .bn
                .iter()
                .map(|s| BnState {
                    name: s.name.clone(),
                    mean: conv(&s.mean),
                    var: conv(&s.var),
                })
                .collect(),
            quantizer: ResidualQuantizer {
                codebooks: self
                    .quantizer
                    .codebooks
                    .iter()
                    .map(|c| crate::rvq::Codebook {
                        vectors: c.vectors.mapv(|x| G::of_f64(x.as_f64())),
                        ema_usage: c.ema_usage.clone(),
                    })
                    .collect(),
                decay: self.quantizer.decay,
                reinit_threshold: self.quantizer.reinit_threshold,
                beta: self.quantizer.beta,
            },
            layout: self.layout.clone(),
        }
    }
}
