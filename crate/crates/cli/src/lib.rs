//! Command-line front end: corpus generation, training, translation,
//! evaluation, complexity benchmarks and the representation probe.

pub mod commands;
mod run_dir;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use ctxformer::config::{Preset, RunConfig};
use ctxformer::Error;

pub use run_dir::{RunDir, THREADS_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "ctxformer",
    version,
    about = "Hybrid attention encoder-decoder: train, decode, evaluate"
)]
pub struct Cli {
    /// Configuration file (`key = value` lines under `[section]` headers).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for initialisation, training and corpus generation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base preset; overrides the one named in the config file.
    #[arg(long, global = true, value_parser = ["paper", "toy"])]
    pub preset: Option<String>,
    /// Output location; its meaning depends on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run directory holding the tokenizers and checkpoints (overrides `paths.out_dir`).
    #[arg(long, global = true)]
    pub run: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/valid/test corpus files into the `--out` directory.
    Gen,
    /// Train on the generated corpus, writing into the `--out` run directory.
    Train {
        /// Continue from the newest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Decode one source sentence per line into `--out` (or stdout).
    Translate {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the averaged checkpoint of the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score hypotheses against references.
    Eval {
        /// Hypotheses, one tokenised sentence per line.
        #[arg(long)]
        hyp: PathBuf,
        /// References aligned line by line with `--hyp`.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Tagged corpus file; adds POS/NER accuracy of the run's model.
        #[arg(long)]
        tags: Option<PathBuf>,
        /// Used with `--tags`; defaults to the averaged checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Measure op counts and wall time of the four layer families.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128])]
        d: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [3usize, 7])]
        f: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Allowed relative deviation from the predicted scaling.
        #[arg(long, default_value_t = 0.25)]
        tolerance: f64,
    },
    /// Cosine similarity of two words' representations in a sentence.
    Probe {
        #[arg(long)]
        sentence: String,
        #[arg(long)]
        word_a: String,
        #[arg(long)]
        word_b: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Process exit status for an error: 2 configuration, 3 data or I/O,
/// 4 runtime or numerical.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Format { .. } => 3,
        Error::Shape(_) | Error::Numerical(_) => 4,
    }
}

/// Loads and validates the run configuration described by the global flags.
pub fn load_config(cli: &Cli) -> ctxformer::Result<RunConfig> {
    let preset = cli.preset.as_deref().map(str::parse::<Preset>).transpose()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, preset)?,
        None => RunConfig::preset(preset.unwrap_or(Preset::Toy)),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(run) = &cli.run {
        cfg.out_dir = run.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Executes the parsed command, writing its report to stdout.
pub fn run(cli: &Cli) -> ctxformer::Result<()> {
    use commands::*;
    let threads = run_dir::thread_cap()?;
    match &cli.command {
        Command::Bench {
            n,
            d,
            f,
            repeats,
            tolerance,
        } => {
            let report = cmd_bench(n, d, f, *repeats, *tolerance)?;
            emit(cli.out.as_deref(), &report.render())
        }
        Command::Gen => {
            let mut cfg = load_config(cli)?;
            if let Some(out) = &cli.out {
                cfg.data.corpus_dir = out.clone();
            }
            let summary = cmd_gen(&cfg, &cfg.data.corpus_dir)?;
            println!("{summary}");
            Ok(())
        }
        Command::Train { resume } => {
            let mut cfg = load_config(cli)?;
            if let Some(out) = &cli.out {
                cfg.out_dir = out.clone();
            }
            let report = cmd_train(
                &cfg,
                &TrainOptions {
                    resume: *resume,
                    ..Default::default()
                },
            )?;
            println!("{report}");
            Ok(())
        }
        Command::Translate { input, checkpoint } => {
            let cfg = load_config(cli)?;
            let lines = cmd_translate(&cfg, input, checkpoint.as_deref(), threads)?;
            let mut text = lines.join("\n");
            if !lines.is_empty() {
                text.push('\n');
            }
            match &cli.out {
                Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Eval {
            hyp,
            reference,
            tags,
            checkpoint,
        } => {
            let model = match tags {
                Some(t) => Some((load_config(cli)?, t.clone(), checkpoint.clone())),
                None => None,
            };
            let report = cmd_eval(
                hyp,
                reference,
                model.as_ref().map(|(c, t, k)| (c, t.as_path(), k.as_deref())),
            )?;
            emit(cli.out.as_deref(), &report.render())
        }
        Command::Probe {
            sentence,
            word_a,
            word_b,
            checkpoint,
        } => {
            let cfg = load_config(cli)?;
            let report = cmd_probe(&cfg, sentence, word_a, word_b, checkpoint.as_deref())?;
            emit(cli.out.as_deref(), &report.render())
        }
    }
}

fn emit(out: Option<&std::path::Path>, text: &str) -> ctxformer::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
