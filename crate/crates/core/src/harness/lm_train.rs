use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{ArrayData, Checkpoint};
use super::codec_train::load_codec;
use super::config::Config;
use super::state::*;
use crate::codec::CodecModel;
use crate::data::{chunk_offsets, load_manifest, StemSet};
use crate::error::{Error, Result};
use crate::lm::LmModel;
use crate::optim::{Adam, AdamConfig};
use crate::rvq::CodeGrid;

pub const LM_KIND: &str = "lm";

/// Errors unless the codec's quantizer matches the language model's vocabulary.
pub fn check_compatible(codec: &CodecModel<f32>, cfg: &Config) -> Result<()> {
    let q = &codec.quantizer;
    if q.depth() != cfg.lm.q_depth {
        return Err(Error::ConfigMismatch {
            field: "lm.q_depth".into(),
            found: q.depth().to_string(),
            expected: cfg.lm.q_depth.to_string(),
        });
    }
    if q.codebook_size() != cfg.lm.n_cb {
        return Err(Error::ConfigMismatch {
            field: "lm.n_cb".into(),
            found: q.codebook_size().to_string(),
            expected: cfg.lm.n_cb.to_string(),
        });
    }
    Ok(())
}

/// Encodes every `chunk_seconds` window of `tracks` to a grid, reusing
/// `cache/track<i>_chunk<j>.rvqg` when it already exists.
pub fn cached_grids(codec: &CodecModel<f32>, tracks: &[StemSet], chunk_seconds: f64, cache: &Path) -> Result<Vec<CodeGrid>> {
    std::fs::create_dir_all(cache).map_err(|e| Error::io(cache, e))?;
    let mut grids = Vec::new();
    let (mut hits, mut misses) = (0, 0);
    for (ti, t) in tracks.iter().enumerate() {
        let size = (chunk_seconds * t.sample_rate() as f64).round() as usize;
        for (ci, off) in chunk_offsets(t.len(), size, size).into_iter().enumerate() {
            let path = cache.join(format!("track{ti:04}_chunk{ci:04}.rvqg"));
            let grid = if path.is_file() {
                hits += 1;
                CodeGrid::read(&path)?
            } else {
                misses += 1;
                let g = codec.encode_grid(&t.mixture().samples()[off..off + size])?;
                g.write(&path)?;
                g
            };
            grids.push(grid);
        }
    }
    log::info!("grid cache: {hits} read, {misses} encoded");
    Ok(grids)
}

#[derive(Debug, Clone)]
pub struct LmTrainer {
    pub config: Config,
    pub model: LmModel<f32>,
    pub opt: Adam<f32>,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub last: Option<f64>,
}

impl LmTrainer {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let model = LmModel::new(config.lm.clone(), config.train.seed)?;
        let adam = AdamConfig {
            learning_rate: config.lm_train.learning_rate,
            ..config.train.adam()
        };
        let opt = Adam::new(adam, &model.param_sizes());
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        rng.set_stream(2);
        Ok(Self {
            config,
            model,
            opt,
            step: 0,
            rng,
            last: None,
        })
    }

    fn names(&self) -> Vec<String> {
        self.model.params.iter().map(|p| format!("param/{}", p.name)).collect()
    }

    /// One Adam step on a random batch of `grids`; returns the NLL.
    pub fn train_step(&mut self, grids: &[CodeGrid]) -> Result<f64> {
        if grids.is_empty() {
            return Err(Error::InvalidInput("no grids to train on".into()));
        }
        let picks: Vec<&CodeGrid> = (0..self.config.lm_train.batch_size)
            .map(|_| &grids[self.rng.gen_range(0..grids.len())])
            .collect();
        let nll = self.model.train_step(&mut self.opt, &picks)?;
        self.step += 1;
        self.last = Some(nll);
        Ok(nll)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(LM_KIND, self.config.to_toml());
        ck.push("state", &[1], ArrayData::U64(vec![self.step]));
        ck.push("metrics", &[1], ArrayData::F64(vec![self.last.unwrap_or(f64::NAN)]));
        save_rng(&mut ck, &self.rng);
        save_params(&mut ck, "param", &self.model.params);
        save_adam(&mut ck, &self.opt, &self.names());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(LM_KIND)?;
        let mut t = Self::new(Config::from_toml(&ck.config, &[])?)?;
        load_params(ck, "param", &mut t.model.params)?;
        let names = t.names();
        load_adam(ck, &mut t.opt, &names)?;
        t.step = counters(ck, "state", 1)?[0];
        let m = ck.f64("metrics", 1)?[0];
        t.last = (!m.is_nan()).then_some(m);
        t.rng = load_rng(ck)?;
        Ok(t)
    }
}

pub fn load_lm(path: &Path) -> Result<(Config, LmModel<f32>)> {
    let t = LmTrainer::from_checkpoint(&Checkpoint::read(path)?)?;
    Ok((t.config, t.model))
}

/// Encodes the training split with the frozen codec (cached under
/// `<out>/grids`) and fits the prior, writing `lm.ckpt`.
pub fn train_lm(config: Config, codec_ckpt: &Path, out: &Path, resume: Option<&Path>) -> Result<PathBuf> {
    let (_, codec) = load_codec(codec_ckpt)?;
    check_compatible(&codec, &config)?;
    let tracks = load_manifest(&config.data.train_manifest, &config.data.stems, codec.config.sample_rate)?;
    let grids = cached_grids(&codec, &tracks, config.lm_train.chunk_seconds, &out.join("grids"))?;
    if let Some(g) = grids.iter().find(|g| g.positions() > config.lm.max_positions) {
        return Err(Error::config(
            "lm.max_positions",
            format!("training grids have {} positions, above the cap {}", g.positions(), config.lm.max_positions),
        ));
    }
    let mut trainer = match resume {
        Some(p) => {
            let mut t = LmTrainer::from_checkpoint(&Checkpoint::read(p)?)?;
            t.config.lm_train.max_steps = config.lm_train.max_steps;
            t
        }
        None => LmTrainer::new(config)?,
    };
    run_lm(&mut trainer, &grids, out)
}

pub(crate) fn run_lm(trainer: &mut LmTrainer, grids: &[CodeGrid], out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg = trainer.config.lm_train.clone();
    while trainer.step < cfg.max_steps {
        let nll = trainer.train_step(grids)?;
        if trainer.step % cfg.log_every == 0 || trainer.step == 1 {
            log::info!("step={} loss_nll={nll}", trainer.step);
        }
        if trainer.step % cfg.checkpoint_every == 0 {
            trainer.to_checkpoint().write(&out.join(format!("lm_step{}.ckpt", trainer.step)))?;
        }
    }
    let path = out.join("lm.ckpt");
    trainer.to_checkpoint().write(&path)?;
    Ok(path)
}
