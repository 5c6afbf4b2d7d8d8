use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use stemcodec::harness::{self, Config};
use stemcodec::{Error, Result};

/// Residual-quantized codec for multi-stem source separation.
///
/// Any configuration field can be overridden with `--section.key value`,
/// for example `--train.max_steps 200`.
#[derive(Parser, Debug)]
#[command(name = "stemcodec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic four-instrument dataset.
    MakeToyData(Common),
    /// Train the codec on `data.train_manifest`.
    TrainCodec {
        #[command(flatten)]
        common: Common,
        /// Continue from a codec checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the prior on grids of a frozen codec.
    TrainLm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Split a mixture WAV into stem WAVs.
    Separate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score a codec on a test manifest.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        codec: PathBuf,
        /// Defaults to `data.test_manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Sample codes from the prior and render them.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        seconds: f64,
    },
    /// Encode a WAV file to a code grid (`<out>/codes.rvqg`).
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Decode a code grid to stem WAVs.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

/// Splits `--section.key value` pairs from the arguments clap understands.
fn split_overrides(args: Vec<String>) -> std::result::Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--").filter(|k| k.contains('.')) {
            Some(key) => {
                let (k, v) = match key.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => (key.to_string(), it.next().ok_or_else(|| format!("--{key} needs a value"))?),
                };
                overrides.push((k, v));
            }
            None => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn load_config(c: &Common, overrides: &[(String, String)]) -> Result<Config> {
    let mut o = overrides.to_vec();
    if let Some(seed) = c.seed {
        o.push(("train.seed".into(), seed.to_string()));
    }
    Config::load(c.config.as_deref(), &o)
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    match cli.command {
        Command::MakeToyData(c) => {
            let cfg = load_config(&c, overrides)?;
            let split = harness::make_toy_data(&cfg, cfg.train.seed, &c.out)?;
            println!(
                "wrote {} tracks to {} (train={} validation={} test={})",
                split.train.len() + split.validation.len() + split.test.len(),
                c.out.display(),
                split.train.len(),
                split.validation.len(),
                split.test.len()
            );
        }
        Command::TrainCodec { common, resume } => {
            let cfg = load_config(&common, overrides)?;
            let path = harness::train_codec(cfg, &common.out, resume.as_deref())?;
            println!("checkpoint={}", path.display());
        }
        Command::TrainLm { common, codec, resume } => {
            let cfg = load_config(&common, overrides)?;
            let path = harness::train_lm(cfg, &codec, &common.out, resume.as_deref())?;
            println!("checkpoint={}", path.display());
        }
        Command::Separate { common, codec, input } => {
            let cfg = load_config(&common, overrides)?;
            for p in harness::separate(&codec, &input, &common.out, Some(cfg.eval.batch_size))? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate { common, codec, manifest } => {
            let cfg = load_config(&common, overrides)?;
            let manifest = manifest.unwrap_or_else(|| cfg.data.test_manifest.clone());
            let eval = (common.config.is_some() || overrides.iter().any(|(k, _)| k.starts_with("eval."))).then_some(&cfg.eval);
            let report = harness::evaluate_cmd(&codec, &manifest, eval, &common.out)?;
            print!("{}", report.table());
        }
        Command::Generate { common, lm, codec, seconds } => {
            let cfg = load_config(&common, overrides)?;
            let path = harness::generate_cmd(&lm, &codec, seconds, cfg.train.seed, &common.out)?;
            println!("{}", path.display());
        }
        Command::Encode { common, codec, input } => {
            mkdir(&common.out)?;
            let path = common.out.join("codes.rvqg");
            let g = harness::encode_cmd(&codec, &input, &path)?;
            println!("{} positions={} depth={}", path.display(), g.positions(), g.depth());
        }
        Command::Decode { common, codec, input } => {
            let path = harness::decode_cmd(&codec, &input, &common.out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, rec| writeln!(buf, "{}", rec.args()))
        .init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(m) => {
            eprintln!("error class=usage message={m:?}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error class=usage message={first:?}");
            return ExitCode::from(2);
        }
    };
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error class={} message={:?}", e.class(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
