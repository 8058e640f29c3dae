//! Operator entry point: dataset synthesis, training, evaluation, gradient
//! checking and loss-ablation comparison, driven by one declarative config
//! file with command-line overrides.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gradcheck::GradCheckSize;
use crate::margin_loss::LossKind;
use crate::sampler::SyntheticConfig;

pub use commands::{cmd_compare, cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, exit_code_for};
pub use config::{EvalConfig, RunConfig};

#[derive(Parser)]
#[command(
    name = "reidrank",
    about = "Deep ranking for person re-identification with a large adaptive margin loss",
    version
)]
struct Cli {
    /// Worker threads for compute kernels. The kernels are single-threaded
    /// and fully deterministic; values above 1 are accepted for forward
    /// compatibility and currently ignored.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOut {
    /// Output directory (refused when non-empty unless --force).
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic identity dataset on disk.
    Synth {
        /// Training identities (at least 2).
        #[arg(long)]
        ids: usize,
        /// Disjoint test identities.
        #[arg(long, default_value_t = 0)]
        test_ids: usize,
        #[arg(long, default_value_t = 4)]
        images_per_view: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 230)]
        height: usize,
        #[arg(long, default_value_t = 80)]
        width: usize,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Train a ranking model on a dataset directory.
    Train {
        /// Declarative TOML config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (cam_a/, cam_b/, manifest.json).
        #[arg(long)]
        data: PathBuf,
        /// Loss kind override: adaptive, contrastive or triplet.
        #[arg(long)]
        loss: Option<String>,
        /// Fixed margin for the baseline losses.
        #[arg(long)]
        margin: Option<f64>,
        /// Learning rate override.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Evaluate a checkpoint: CMC curve, mAP, ranking dumps.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Random single-shot repeats to average over.
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Gallery entries per probe in rankings.csv.
        #[arg(long)]
        top_k: Option<usize>,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Verify every analytic gradient against finite differences.
    Gradcheck {
        /// small = full matrix (R in {1,2}, batch-norm on/off, all losses);
        /// tiny = R=1 smoke run.
        #[arg(long, default_value = "small")]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train each loss variant across seeds and tabulate rank-1/rank-5.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated losses to compare.
        #[arg(long, default_value = "adaptive,contrastive,triplet")]
        losses: String,
        /// Seeds per variant.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Comma-separated residual block counts.
        #[arg(long, default_value = "1")]
        r_list: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        out: CommonOut,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_losses(text: &str) -> Result<Vec<LossKind>> {
    text.split(',')
        .map(|name| config::loss_kind_from_name(name.trim(), None))
        .collect()
}

fn parse_depths(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad residual block count {part:?}")))
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<bool> {
    if cli.threads == 0 {
        return Err(Error::InvalidConfig("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Synth {
            ids,
            test_ids,
            images_per_view,
            seed,
            height,
            width,
            out,
        } => {
            let synth = SyntheticConfig {
                train_ids: ids,
                test_ids,
                images_per_view,
                seed,
                height,
                width,
                ..SyntheticConfig::default()
            };
            cmd_synth(&synth, &out.out, out.force)?;
            Ok(true)
        }
        Command::Train {
            config,
            data,
            loss,
            margin,
            lr,
            epochs,
            seed,
            out,
        } => {
            let mut run = load_config(&config)?;
            if let Some(name) = loss {
                config::loss_kind_from_name(&name, None)?;
                run.loss.kind = name;
            }
            if let Some(m) = margin {
                run.loss.margin = m;
            }
            if let Some(lr) = lr {
                run.train.learning_rate = lr;
            }
            if let Some(epochs) = epochs {
                run.train.epochs = epochs;
            }
            if let Some(seed) = seed {
                run.train.seed = seed;
            }
            cmd_train(&run, &data, &out.out, out.force)?;
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            data,
            repeats,
            seed,
            top_k,
            out,
        } => {
            let mut eval = EvalConfig::default();
            if let Some(r) = repeats {
                eval.repeats = r;
            }
            if let Some(s) = seed {
                eval.seed = s;
            }
            if let Some(k) = top_k {
                eval.top_k = k;
            }
            cmd_eval(&checkpoint, &data, &out.out, &eval, out.force)?;
            Ok(true)
        }
        Command::Gradcheck { size, seed } => {
            let size = match size.as_str() {
                "small" => GradCheckSize::Small,
                "tiny" => GradCheckSize::Tiny,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown gradcheck size {other:?} (expected small or tiny)"
                    )))
                }
            };
            cmd_gradcheck(size, seed)
        }
        Command::Compare {
            config,
            data,
            losses,
            seeds,
            r_list,
            epochs,
            out,
        } => {
            let mut run = load_config(&config)?;
            if let Some(epochs) = epochs {
                run.train.epochs = epochs;
            }
            run.validate()?;
            let losses = parse_losses(&losses)?;
            let depths = parse_depths(&r_list)?;
            commands::prepare_out_dir(&out.out, out.force)?;
            let dataset = crate::sampler::load_dataset(&data)?;
            let rows = cmd_compare(&run, &dataset, &losses, seeds, &depths, &out.out)?;
            for row in &rows {
                println!(
                    "{:<12} R={} rank1 {:.3} +- {:.3} rank5 {:.3} +- {:.3}",
                    row.loss, row.residual_blocks, row.rank1_mean, row.rank1_std, row.rank5_mean, row.rank5_std
                );
            }
            Ok(true)
        }
    }
}

/// Parses arguments and runs the selected command, returning the process
/// exit code: 0 success, 1 validation error, 2 numeric failure, 3 I/O.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
