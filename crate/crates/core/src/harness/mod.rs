//! Configuration, checkpoints, training loops and the command layer behind
//! the CLI.

mod checkpoint;
mod codec_train;
mod commands;
mod config;
mod lm_train;
mod state;

pub use checkpoint::{ArrayData, Checkpoint, NamedArray};
pub use codec_train::{load_codec, train_codec, CodecTrainer, StepReport, TrainData, CODEC_KIND};
pub use commands::{
    crossfade_weight, decode_cmd, encode_cmd, evaluate_cmd, generate_cmd, make_toy_data, positions_for, separate,
    separate_waveform,
};
pub use config::{Config, DataConfig, LmTrainConfig, RvqConfig, TrainConfig};
pub use lm_train::{cached_grids, check_compatible, load_lm, train_lm, LmTrainer, LM_KIND};
