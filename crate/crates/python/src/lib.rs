//! Python module `stemcodec`: metrics, mel analysis, code grids and the
//! file-level commands of the command-line tool.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use stemcodec::dsp::{mel_spectrogram as mel, Waveform};
use stemcodec::harness::{self, Config};
use stemcodec::rvq::CodeGrid;

create_exception!(stemcodec, StemcodecError, PyException, "Raised for every toolkit error; `args[0]` is the error class.");

fn err(e: stemcodec::Error) -> PyErr {
    StemcodecError::new_err((e.class(), e.to_string()))
}

/// SI-SDR of `estimate` against `reference` in dB, clamped to ±100.
#[pyfunction]
fn si_sdr(reference: Vec<f64>, estimate: Vec<f64>) -> PyResult<f64> {
    stemcodec::metrics::si_sdr(&reference, &estimate).map_err(err)
}

/// SI-SDR improvement of `estimate` over `mixture`.
#[pyfunction]
fn si_sdri(reference: Vec<f64>, estimate: Vec<f64>, mixture: Vec<f64>) -> PyResult<f64> {
    stemcodec::metrics::si_sdri(&reference, &estimate, &mixture).map_err(err)
}

/// Start offsets of every complete window of `size` samples, `hop` apart.
#[pyfunction]
fn chunk_offsets(length: usize, size: usize, hop: usize) -> Vec<usize> {
    stemcodec::data::chunk_offsets(length, size, hop)
}

/// 64-band mel power frames (`frames × 64`) with window `scale`, hop `scale / 4`.
#[pyfunction]
fn mel_spectrogram(samples: Vec<f32>, sample_rate: u32, scale: usize) -> PyResult<Vec<Vec<f64>>> {
    let w = Waveform::new(samples, sample_rate).map_err(err)?;
    let m = mel(&w, scale).map_err(err)?;
    Ok(m.frames.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Reads a `.rvqg` file as a list of per-position code lists.
#[pyfunction]
fn read_code_grid(path: PathBuf) -> PyResult<Vec<Vec<u16>>> {
    let g = CodeGrid::read(&path).map_err(err)?;
    Ok((0..g.positions()).map(|t| g.row(t).to_vec()).collect())
}

/// Writes a code grid given as per-position code lists.
#[pyfunction]
fn write_code_grid(path: PathBuf, rows: Vec<Vec<u16>>, codebook_size: usize) -> PyResult<()> {
    let depth = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != depth) {
        return Err(err(stemcodec::Error::Shape("rows differ in length".into())));
    }
    let n = rows.len();
    let g = CodeGrid::new(rows.concat(), n, depth, codebook_size).map_err(err)?;
    g.write(&path).map_err(err)
}

/// Writes the synthetic dataset; returns the track directories per split.
#[pyfunction]
#[pyo3(signature = (out, n_tracks=60, seconds=12.0, seed=0, sample_rate=22050))]
fn make_toy_data(out: PathBuf, n_tracks: usize, seconds: f64, seed: u64, sample_rate: u32) -> PyResult<BTreeMap<String, Vec<PathBuf>>> {
    let s = stemcodec::data::make_toy_dataset(n_tracks, seconds, seed, &out, sample_rate).map_err(err)?;
    Ok(BTreeMap::from([
        ("train".to_string(), s.train),
        ("validation".to_string(), s.validation),
        ("test".to_string(), s.test),
    ]))
}

/// Validates a TOML configuration and returns it with every default filled in.
#[pyfunction]
#[pyo3(signature = (text, overrides=Vec::new()))]
fn resolve_config(text: &str, overrides: Vec<(String, String)>) -> PyResult<String> {
    Config::from_toml(text, &overrides).map(|c| c.to_toml()).map_err(err)
}

/// Separates a mixture WAV into `<out>/<stem>.wav`; returns the written paths.
#[pyfunction]
fn separate(codec: PathBuf, input: PathBuf, out: PathBuf) -> PyResult<Vec<PathBuf>> {
    harness::separate(&codec, &input, &out, None).map_err(err)
}

/// Scores a codec on a manifest; returns mean SI-SDRi per stem and `all`.
#[pyfunction]
fn evaluate(codec: PathBuf, manifest: PathBuf, out: PathBuf) -> PyResult<BTreeMap<String, Option<f64>>> {
    let r = harness::evaluate_cmd(&codec, &manifest, None, &out).map_err(err)?;
    let mut m: BTreeMap<String, Option<f64>> = r.per_stem.iter().cloned().collect();
    m.insert("all".into(), r.all_mean);
    Ok(m)
}

/// Encodes a WAV file to a `.rvqg` grid; returns `(positions, depth)`.
#[pyfunction]
fn encode(codec: PathBuf, input: PathBuf, out: PathBuf) -> PyResult<(usize, usize)> {
    harness::encode_cmd(&codec, &input, &out).map(|g| g.shape()).map_err(err)
}

/// Decodes a `.rvqg` grid into stem WAVs; returns the mixture path.
#[pyfunction]
fn decode(codec: PathBuf, grid: PathBuf, out: PathBuf) -> PyResult<PathBuf> {
    harness::decode_cmd(&codec, &grid, &out).map_err(err)
}

#[pymodule]
#[pyo3(name = "stemcodec")]
fn stemcodec_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("StemcodecError", m.py().get_type::<StemcodecError>())?;
    m.add_function(wrap_pyfunction!(si_sdr, m)?)?;
    m.add_function(wrap_pyfunction!(si_sdri, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_offsets, m)?)?;
    m.add_function(wrap_pyfunction!(mel_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(read_code_grid, m)?)?;
    m.add_function(wrap_pyfunction!(write_code_grid, m)?)?;
    m.add_function(wrap_pyfunction!(make_toy_data, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(separate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
