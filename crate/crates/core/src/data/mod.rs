//! WAV I/O, stem directories, chunking and the synthetic toy dataset.

mod manifest;
mod stems;
mod toy;
mod wav;

pub use manifest::{read_manifest, write_manifest};
pub use stems::{chunk, chunk_offsets, load_track, StemSet, DEFAULT_STEMS, PEAK};
pub use toy::{make_toy_dataset, render_toy_track, split_sizes, DatasetSplit};
pub use wav::{decode_wav, encode_wav, read_wav, to_pcm16, write_wav};

use std::path::Path;

use crate::error::Result;

/// Loads every track listed in a manifest, in order.
pub fn load_manifest(path: &Path, names: &[String], sample_rate: u32) -> Result<Vec<StemSet>> {
    read_manifest(path)?
        .iter()
        .map(|d| load_track(d, names, sample_rate))
        .collect()
}
