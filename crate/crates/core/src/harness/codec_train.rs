use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{ArrayData, Checkpoint};
use super::config::Config;
use super::state::*;
use crate::codec::{BnMode, Bound, CodecModel, LossBreakdown, Quantization, SpectralLoss};
use crate::data::{chunk_offsets, load_manifest, StemSet};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, Adam};
use crate::rvq::Codebook;
use crate::tensor::{Tape, Var};

pub const CODEC_KIND: &str = "codec";

/// Training tracks and the clip length drawn from them.
#[derive(Debug, Clone)]
pub struct TrainData {
    tracks: Vec<StemSet>,
    context: usize,
}

impl TrainData {
    /// Keeps tracks at least `context` samples long.
    pub fn new(tracks: Vec<StemSet>, context: usize) -> Result<Self> {
        let total = tracks.len();
        let tracks: Vec<StemSet> = tracks.into_iter().filter(|t| t.len() >= context).collect();
        if tracks.len() < total {
            log::warn!("dropped {} tracks shorter than {context} samples", total - tracks.len());
        }
        if tracks.is_empty() {
            return Err(Error::InvalidInput("no training track is as long as the context".into()));
        }
        Ok(Self { tracks, context })
    }

    pub fn load(cfg: &Config) -> Result<Self> {
        let tracks = load_manifest(&cfg.data.train_manifest, &cfg.data.stems, cfg.codec.sample_rate)?;
        Self::new(tracks, cfg.codec.context_samples())
    }

    pub fn tracks(&self) -> &[StemSet] {
        &self.tracks
    }

    /// Random aligned clips: mixtures `[batch, len]` and stems `[batch, sources, len]`.
    pub fn sample(&self, rng: &mut ChaCha8Rng, batch: usize) -> (Array2<f32>, Array3<f32>) {
        let len = self.context;
        let n = self.tracks[0].stems().len();
        let mut mix = Array2::zeros((batch, len));
        let mut stems = Array3::zeros((batch, n, len));
        for b in 0..batch {
            let t = &self.tracks[rng.gen_range(0..self.tracks.len())];
            let off = rng.gen_range(0..=t.len() - len);
            fill(t, off, len, b, &mut mix, &mut stems);
        }
        (mix, stems)
    }

    /// The first `count` non-overlapping clips across the tracks, in order.
    pub fn fixed_clips(&self, count: usize) -> Vec<(Array2<f32>, Array3<f32>)> {
        let len = self.context;
        let n = self.tracks[0].stems().len();
        let mut out = Vec::new();
        'outer: for t in &self.tracks {
            for off in chunk_offsets(t.len(), len, len) {
                if out.len() == count {
                    break 'outer;
                }
                let mut mix = Array2::zeros((1, len));
                let mut stems = Array3::zeros((1, n, len));
                fill(t, off, len, 0, &mut mix, &mut stems);
                out.push((mix, stems));
            }
        }
        out
    }
}

fn fill(t: &StemSet, off: usize, len: usize, b: usize, mix: &mut Array2<f32>, stems: &mut Array3<f32>) {
    for i in 0..len {
        mix[[b, i]] = t.mixture().samples()[off + i];
    }
    for (s, w) in t.stems().iter().enumerate() {
        for i in 0..len {
            stems[[b, s, i]] = w.samples()[off + i];
        }
    }
}

/// Outcome of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub losses: LossBreakdown,
    pub grad_norm: f64,
    pub reinitialized: usize,
}

impl StepReport {
    pub fn log_line(&self) -> String {
        format!(
            "step={} loss_spec={} loss_rec={} loss_comm={} loss_total={} grad_norm={:.4} reinit={}",
            self.step,
            self.losses.spectral,
            self.losses.reconstruction,
            self.losses.commitment,
            self.losses.total,
            self.grad_norm,
            self.reinitialized
        )
    }
}

/// Everything needed to continue codec training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct CodecTrainer {
    pub config: Config,
    pub model: CodecModel<f32>,
    pub opt: Adam<f32>,
    /// Completed steps.
    pub step: u64,
    /// How often the k-means initialization has run.
    pub kmeans_inits: u64,
    pub rng: ChaCha8Rng,
    pub last: Option<LossBreakdown>,
    pub validation: Option<f64>,
    spectral: SpectralLoss<f32>,
}

fn codec_model(cfg: &Config) -> Result<CodecModel<f32>> {
    CodecModel::new(cfg.codec.clone(), &cfg.rvq.settings(cfg.codec.latent_channels), cfg.train.seed)
}

impl CodecTrainer {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let model = codec_model(&config)?;
        let mut sizes: Vec<usize> = model.params.iter().map(|p| p.value.len()).collect();
        sizes.extend(model.quantizer.codebooks.iter().map(|c| c.vectors.len()));
        let opt = Adam::new(config.train.adam(), &sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        rng.set_stream(1);
        let spectral = SpectralLoss::new(config.codec.sample_rate, &config.loss)?;
        Ok(Self {
            config,
            model,
            opt,
            step: 0,
            kmeans_inits: 0,
            rng,
            last: None,
            validation: None,
            spectral,
        })
    }

    fn optimizer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.model.params.iter().map(|p| format!("param/{}", p.name)).collect();
        names.extend((0..self.model.quantizer.depth()).map(|d| format!("codebook/{d}")));
        names
    }

    fn kmeans_init(&mut self, data: &TrainData) -> Result<()> {
        let batches = self.config.rvq.kmeans_batches.max(1);
        let mut rows: Vec<f32> = Vec::new();
        for _ in 0..batches {
            let (mix, _) = data.sample(&mut self.rng, self.config.train.batch_size);
            for clip in self.model.encode_batch(&mix)? {
                rows.extend(clip.latent.iter());
            }
        }
        let d = self.model.config.latent_channels;
        let batch = Array2::from_shape_vec((rows.len() / d, d), rows).expect("latent rows");
        let seed = self.config.train.seed.wrapping_add(0x6b6d);
        self.model
            .quantizer
            .kmeans_initialize(batch.view(), self.config.rvq.kmeans_iters, seed)?;
        self.kmeans_inits += 1;
        log::info!("step={} kmeans_init rows={}", self.step, batch.nrows());
        Ok(())
    }

    /// One optimization step on a freshly sampled batch.
    pub fn train_step(&mut self, data: &TrainData) -> Result<StepReport> {
        if self.kmeans_inits == 0 {
            self.kmeans_init(data)?;
        }
        let (mix, stems) = data.sample(&mut self.rng, self.config.train.batch_size);
        let mut tape = Tape::new();
        let model = &self.model;
        let mut bound = Bound::new(&mut tape, model, BnMode::Train, true);
        let out = model.forward(&mut tape, &mut bound, &mix, &stems, &self.config.loss, &self.spectral, Quantization::Live)?;
        let step = self.step + 1;
        let total = out.breakdown.total;
        if !total.is_finite() {
            return Err(Error::Diverged { step, value: total });
        }
        let mut grads = tape.backward(out.total);
        let vars: Vec<Var> = bound.vars.iter().chain(&out.codebooks).copied().collect();
        let mut g: Vec<Vec<f32>> = vars.iter().map(|&v| grads.take(v)).collect();
        let stats: Vec<_> = bound.take_stats();
        let grad_norm = if self.config.train.grad_clip > 0.0 {
            clip_global_norm(&mut g, self.config.train.grad_clip)
        } else {
            clip_global_norm(&mut g, f64::INFINITY)
        };
        if !grad_norm.is_finite() {
            return Err(Error::Diverged { step, value: grad_norm });
        }
        let q = out.quantized;
        drop(tape);

        let model = &mut self.model;
        let slots = model
            .params
            .iter_mut()
            .map(|p| p.value.as_mut_slice())
            .chain(model.quantizer.codebooks.iter_mut().map(|c| c.vectors.as_slice_mut().expect("contiguous codebook")));
        self.opt.update(slots, &g);
        model.update_bn(&stats);
        model.quantizer.ema_update(&q.grid);

        let threshold = model.quantizer.reinit_threshold;
        let dead: Vec<Vec<usize>> = model
            .quantizer
            .codebooks
            .iter()
            .map(|c| (0..c.size()).filter(|&i| c.ema_usage[i] < threshold).collect())
            .collect();
        let views: Vec<_> = q.residuals.iter().map(|r| r.view()).collect();
        let reinitialized = model.quantizer.reinit_dead_codes(&views, &mut self.rng)?;
        let n_params = model.params.len();
        let d = model.config.latent_channels;
        for (depth, codes) in dead.iter().enumerate() {
            let (m, v) = (&mut self.opt.m[n_params + depth], &mut self.opt.v[n_params + depth]);
            for &i in codes {
                m[i * d..(i + 1) * d].fill(0.0);
                v[i * d..(i + 1) * d].fill(0.0);
            }
        }

        self.step = step;
        self.last = Some(out.breakdown);
        Ok(StepReport {
            step,
            losses: out.breakdown,
            grad_norm,
            reinitialized,
        })
    }

    /// Mean total loss over fixed clips with running batch-norm statistics.
    pub fn validate(&mut self, clips: &[(Array2<f32>, Array3<f32>)]) -> Result<Option<f64>> {
        if clips.is_empty() {
            return Ok(None);
        }
        let mut sum = 0.0;
        for (mix, stems) in clips {
            let mut tape = Tape::new();
            let mut bound = Bound::new(&mut tape, &self.model, BnMode::Eval, false);
            let out = self.model.forward(&mut tape, &mut bound, mix, stems, &self.config.loss, &self.spectral, Quantization::Live)?;
            sum += out.breakdown.total;
        }
        let v = sum / clips.len() as f64;
        self.validation = Some(v);
        Ok(Some(v))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CODEC_KIND, self.config.to_toml());
        ck.push("state", &[2], ArrayData::U64(vec![self.step, self.kmeans_inits]));
        save_rng(&mut ck, &self.rng);
        let l = self.last.unwrap_or(LossBreakdown {
            spectral: f64::NAN,
            reconstruction: f64::NAN,
            commitment: f64::NAN,
            total: f64::NAN,
        });
        let metrics = vec![l.spectral, l.reconstruction, l.commitment, l.total, self.validation.unwrap_or(f64::NAN)];
        ck.push("metrics", &[5], ArrayData::F64(metrics));
        save_model(&mut ck, &self.model);
        save_adam(&mut ck, &self.opt, &self.optimizer_names());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CODEC_KIND)?;
        let config = Config::from_toml(&ck.config, &[])?;
        let mut t = Self::new(config)?;
        load_model(ck, &mut t.model)?;
        let names = t.optimizer_names();
        load_adam(ck, &mut t.opt, &names)?;
        let s = counters(ck, "state", 2)?;
        (t.step, t.kmeans_inits) = (s[0], s[1]);
        t.rng = load_rng(ck)?;
        let m = ck.f64("metrics", 5)?;
        t.last = (!m[3].is_nan()).then_some(LossBreakdown {
            spectral: m[0],
            reconstruction: m[1],
            commitment: m[2],
            total: m[3],
        });
        t.validation = (!m[4].is_nan()).then_some(m[4]);
        Ok(t)
    }
}

pub(crate) fn save_model(ck: &mut Checkpoint, model: &CodecModel<f32>) {
    save_params(ck, "param", &model.params);
    for bn in &model.bn {
        ck.push(format!("bn.mean/{}", bn.name), &[bn.mean.len()], ArrayData::F32(bn.mean.clone()));
        ck.push(format!("bn.var/{}", bn.name), &[bn.var.len()], ArrayData::F32(bn.var.clone()));
    }
    for (d, cb) in model.quantizer.codebooks.iter().enumerate() {
        let v = cb.vectors.as_standard_layout().iter().copied().collect();
        ck.push(format!("codebook/{d}"), &[cb.size(), cb.dim()], ArrayData::F32(v));
        ck.push(format!("usage/{d}"), &[cb.size()], ArrayData::F64(cb.ema_usage.clone()));
    }
}

fn load_model(ck: &Checkpoint, model: &mut CodecModel<f32>) -> Result<()> {
    load_params(ck, "param", &mut model.params)?;
    for bn in model.bn.iter_mut() {
        let n = bn.mean.len();
        bn.mean.copy_from_slice(ck.f32(&format!("bn.mean/{}", bn.name), n)?);
        bn.var.copy_from_slice(ck.f32(&format!("bn.var/{}", bn.name), n)?);
    }
    for (d, cb) in model.quantizer.codebooks.iter_mut().enumerate() {
        let (size, dim) = (cb.size(), cb.dim());
        let v = ck.f32(&format!("codebook/{d}"), size * dim)?;
        let u = ck.f64(&format!("usage/{d}"), size)?;
        *cb = Codebook::new(Array2::from_shape_vec((size, dim), v.to_vec()).expect("codebook shape"), 0.0);
        cb.ema_usage.copy_from_slice(u);
    }
    Ok(())
}

/// Configuration and inference model stored in a codec checkpoint.
pub fn load_codec(path: &Path) -> Result<(Config, CodecModel<f32>)> {
    let ck = Checkpoint::read(path)?;
    ck.expect_kind(CODEC_KIND)?;
    let config = Config::from_toml(&ck.config, &[])?;
    let mut model = codec_model(&config)?;
    load_model(&ck, &mut model)?;
    Ok((config, model))
}

/// Runs codec training to `train.max_steps`, writing `codec_step<N>.ckpt`
/// every `checkpoint_every` steps and `codec.ckpt` at the end.
pub fn train_codec(config: Config, out: &Path, resume: Option<&Path>) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let data = TrainData::load(&config)?;
    let mut trainer = match resume {
        Some(p) => {
            let t = CodecTrainer::from_checkpoint(&Checkpoint::read(p)?)?;
            check_resume(&t.config, &config)?;
            let mut t = t;
            t.config.train.max_steps = config.train.max_steps;
            t
        }
        None => CodecTrainer::new(config.clone())?,
    };
    let val = if config.train.validation_chunks > 0 && config.data.validation_manifest.is_file() {
        let tracks = load_manifest(&config.data.validation_manifest, &config.data.stems, config.codec.sample_rate)?;
        TrainData::new(tracks, config.codec.context_samples())
            .map(|d| d.fixed_clips(config.train.validation_chunks))
            .unwrap_or_default()
    } else {
        Vec::new()
    };
    run_codec(&mut trainer, &data, &val, out)
}

fn check_resume(saved: &Config, now: &Config) -> Result<()> {
    let pairs = [
        ("codec", toml::to_string(&saved.codec), toml::to_string(&now.codec)),
        ("rvq", toml::to_string(&saved.rvq), toml::to_string(&now.rvq)),
        ("loss", toml::to_string(&saved.loss), toml::to_string(&now.loss)),
    ];
    for (field, a, b) in pairs {
        let (a, b) = (a.expect("serializable"), b.expect("serializable"));
        if a != b {
            return Err(Error::ConfigMismatch {
                field: field.into(),
                found: a.replace('\n', "; "),
                expected: b.replace('\n', "; "),
            });
        }
    }
    Ok(())
}

pub(crate) fn run_codec(trainer: &mut CodecTrainer, data: &TrainData, val: &[(Array2<f32>, Array3<f32>)], out: &Path) -> Result<PathBuf> {
    let cfg = trainer.config.train.clone();
    while trainer.step < cfg.max_steps {
        let r = trainer.train_step(data)?;
        if r.step % cfg.log_every == 0 || r.step == 1 {
            log::info!("{}", r.log_line());
        }
        if r.step % cfg.checkpoint_every == 0 {
            if let Some(v) = trainer.validate(val)? {
                log::info!("step={} val_loss={v}", r.step);
            }
            trainer.to_checkpoint().write(&out.join(format!("codec_step{}.ckpt", r.step)))?;
        }
    }
    let path = out.join("codec.ckpt");
    trainer.to_checkpoint().write(&path)?;
    Ok(path)
}
