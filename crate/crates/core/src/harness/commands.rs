use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::codec_train::load_codec;
use super::config::Config;
use super::lm_train::{check_compatible, load_lm};
use crate::data::{load_manifest, make_toy_dataset, read_wav, write_wav, DatasetSplit};
use crate::dsp::{resample, Waveform};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, Separator};
use crate::rvq::CodeGrid;

pub fn make_toy_data(cfg: &Config, seed: u64, out: &Path) -> Result<DatasetSplit> {
    make_toy_dataset(cfg.data.toy_tracks, cfg.data.toy_seconds, seed, out, cfg.codec.sample_rate)
}

/// Triangular cross-fade weight of sample `n` in a window of `2 * half`.
pub fn crossfade_weight(n: usize, half: usize) -> f64 {
    if n < half {
        n as f64 / half as f64
    } else {
        (2 * half - n) as f64 / half as f64
    }
}

/// Separates a whole track in windows of `chunk` samples advancing by
/// `chunk / 2`, cross-faded with triangular weights. The track is padded by
/// half a window on each side so every sample lies where the weights sum to one.
pub fn separate_waveform(model: &dyn Separator, n_sources: usize, mix: &[f32], chunk: usize, batch: usize) -> Result<Vec<Vec<f32>>> {
    if chunk < 2 || chunk % 2 != 0 {
        return Err(Error::InvalidInput(format!("chunk length {chunk} must be even")));
    }
    if mix.is_empty() {
        return Err(Error::InvalidInput("empty mixture".into()));
    }
    let half = chunk / 2;
    let windows = mix.len().div_ceil(half) + 1;
    let padded_len = (windows + 1) * half;
    let mut padded = vec![0.0f32; padded_len];
    padded[half..half + mix.len()].copy_from_slice(mix);
    let mut acc = vec![vec![0.0f64; padded_len]; n_sources];
    let mut wsum = vec![0.0f64; padded_len];
    let starts: Vec<usize> = (0..windows).map(|w| w * half).collect();
    for group in starts.chunks(batch.max(1)) {
        let mut m = Array2::zeros((group.len(), chunk));
        for (r, &s) in group.iter().enumerate() {
            m.row_mut(r).assign(&ndarray::ArrayView1::from(&padded[s..s + chunk]));
        }
        let est = model.separate(&m)?;
        if est.dim() != (group.len(), n_sources, chunk) {
            return Err(Error::Shape(format!("separator returned {:?}", est.dim())));
        }
        for (r, &s) in group.iter().enumerate() {
            for n in 0..chunk {
                let w = crossfade_weight(n, half);
                wsum[s + n] += w;
                for (src, a) in acc.iter_mut().enumerate() {
                    a[s + n] += w * est[[r, src, n]] as f64;
                }
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|a| {
            (0..mix.len())
                .map(|i| (a[half + i] / wsum[half + i]) as f32)
                .collect()
        })
        .collect())
}

fn chunk_samples(cfg: &Config) -> usize {
    (cfg.eval.chunk_seconds * cfg.codec.sample_rate as f64).round() as usize
}

/// Writes `<out>/<stem>.wav` for every source of the mixture at `input`.
pub fn separate(codec_ckpt: &Path, input: &Path, out: &Path, eval_batch: Option<usize>) -> Result<Vec<PathBuf>> {
    let (cfg, model) = load_codec(codec_ckpt)?;
    let wav = read_wav(input)?;
    let rate = cfg.codec.sample_rate;
    let mix = resample(&wav, rate)?;
    let stems = separate_waveform(&model, cfg.codec.n_sources, mix.samples(), chunk_samples(&cfg), eval_batch.unwrap_or(cfg.eval.batch_size))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut paths = Vec::new();
    for (name, s) in cfg.data.stems.iter().zip(stems) {
        let w = resample(&Waveform::new(s, rate)?, wav.sample_rate())?;
        let mut v = w.into_samples();
        v.resize(wav.len(), 0.0);
        let path = out.join(format!("{name}.wav"));
        write_wav(&path, &Waveform::new(v, wav.sample_rate())?)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Scores the tracks of `manifest` and writes `report.txt` and `report.kv` to `out`.
pub fn evaluate_cmd(codec_ckpt: &Path, manifest: &Path, eval: Option<&crate::metrics::EvalConfig>, out: &Path) -> Result<EvalReport> {
    let (cfg, model) = load_codec(codec_ckpt)?;
    let eval = eval.unwrap_or(&cfg.eval);
    let tracks = load_manifest(manifest, &cfg.data.stems, cfg.codec.sample_rate)?;
    let report = evaluate(&model, &tracks, eval)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let txt = out.join("report.txt");
    std::fs::write(&txt, report.table()).map_err(|e| Error::io(&txt, e))?;
    report.write(&out.join("report.kv"))?;
    Ok(report)
}

/// Number of latent positions covering `seconds`.
pub fn positions_for(seconds: f64, latent_rate: f64) -> usize {
    (seconds * latent_rate).round() as usize
}

/// Samples a grid from the prior, decodes it without skips and writes
/// `mix.wav`, one WAV per stem and `codes.rvqg` under `out`.
pub fn generate_cmd(lm_ckpt: &Path, codec_ckpt: &Path, seconds: f64, seed: u64, out: &Path) -> Result<PathBuf> {
    let (lm_cfg, lm) = load_lm(lm_ckpt)?;
    let (cfg, codec) = load_codec(codec_ckpt)?;
    check_compatible(&codec, &lm_cfg)?;
    let n = positions_for(seconds, cfg.codec.latent_rate());
    if n == 0 || n > lm.config.max_positions {
        return Err(Error::InvalidInput(format!(
            "{seconds} s needs {n} positions; the prior accepts 1..={}",
            lm.config.max_positions
        )));
    }
    let grid = lm.generate(n, seed, lm.config.temperature, lm.config.top_k)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    grid.write(&out.join("codes.rvqg"))?;
    write_decoded(&codec, &cfg, &grid, out)
}

fn write_decoded(codec: &crate::codec::CodecModel<f32>, cfg: &Config, grid: &CodeGrid, out: &Path) -> Result<PathBuf> {
    let stems = codec.decode_grid(grid)?;
    let rate = cfg.codec.sample_rate;
    let len = stems.ncols();
    let mut mix = vec![0.0f32; len];
    for (name, row) in cfg.data.stems.iter().zip(stems.rows()) {
        for (m, &v) in mix.iter_mut().zip(row) {
            *m += v;
        }
        let s: Vec<f32> = row.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        write_wav(&out.join(format!("{name}.wav")), &Waveform::new(s, rate)?)?;
    }
    let mix: Vec<f32> = mix.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let path = out.join("mix.wav");
    write_wav(&path, &Waveform::new(mix, rate)?)?;
    Ok(path)
}

/// Encodes a WAV file (zero-padded to the fold) into a code grid file.
pub fn encode_cmd(codec_ckpt: &Path, input: &Path, out: &Path) -> Result<CodeGrid> {
    let (cfg, codec) = load_codec(codec_ckpt)?;
    let w = resample(&read_wav(input)?, cfg.codec.sample_rate)?;
    let f = cfg.codec.fold();
    let mut s = w.into_samples();
    let len = s.len().div_ceil(f).max(1) * f;
    s.resize(len, 0.0);
    let grid = codec.encode_grid(&s)?;
    grid.write(out)?;
    Ok(grid)
}

/// Decodes a code grid file (skips off) into stem WAVs and their sum.
pub fn decode_cmd(codec_ckpt: &Path, grid: &Path, out: &Path) -> Result<PathBuf> {
    let (cfg, codec) = load_codec(codec_ckpt)?;
    let g = CodeGrid::read(grid)?;
    if g.depth() != codec.quantizer.depth() || g.codebook_size() != codec.quantizer.codebook_size() {
        return Err(Error::ConfigMismatch {
            field: "grid".into(),
            found: format!("{}x{}", g.depth(), g.codebook_size()),
            expected: format!("{}x{}", codec.quantizer.depth(), codec.quantizer.codebook_size()),
        });
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_decoded(&codec, &cfg, &g, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    struct Share(usize);

    impl Separator for Share {
        fn separate(&self, m: &Array2<f32>) -> Result<Array3<f32>> {
            let (c, l) = m.dim();
            Ok(Array3::from_shape_fn((c, self.0, l), |(i, _, j)| m[[i, j]] / self.0 as f32))
        }
    }

    #[test]
    fn crossfade_weights_sum_to_one() {
        let half = 50;
        for n in 0..half {
            let s = crossfade_weight(n, half) + crossfade_weight(n + half, half);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn passthrough_reproduces_the_input() {
        for len in [1, 99, 100, 250, 1001] {
            let mix: Vec<f32> = (0..len).map(|i| ((i as f32) * 0.1).sin()).collect();
            let out = separate_waveform(&Share(4), 4, &mix, 100, 3).unwrap();
            assert_eq!(out.len(), 4);
            for i in 0..len {
                assert_eq!(out[0].len(), len);
                let s: f32 = out.iter().map(|o| o[i]).sum();
                assert!((s - mix[i]).abs() < 1e-5, "len {len} sample {i}");
            }
        }
    }

    #[test]
    fn positions_for_four_seconds() {
        assert_eq!(positions_for(4.0, 22050.0 / 200.0), 441);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn overlap_add_reproduces_any_length(len in 1usize..700, half in 1usize..60, batch in 1usize..4) {
                let mix: Vec<f32> = (0..len).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
                let out = separate_waveform(&Share(2), 2, &mix, 2 * half, batch).unwrap();
                for i in 0..len {
                    prop_assert!((out[0][i] + out[1][i] - mix[i]).abs() < 1e-5);
                }
            }
        }
    }
}
