//! Implementations behind the CLI subcommands. Everything here is ordinary
//! library code so the binary stays a thin argument parser.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::cli::config::{EvalConfig, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    full_test_rankings, repeat_protocol, write_cmc_csv, write_rankings_csv, RepeatOutcome,
};
use crate::gradcheck::{run_gradcheck, GradCheckOptions, GradCheckSize};
use crate::margin_loss::LossKind;
use crate::network::NetConfig;
use crate::sampler::{generate_synthetic, load_dataset, save_dataset, Dataset, SyntheticConfig};
use crate::trainer::{
    load_checkpoint, save_checkpoint, Checkpoint, EpochDecision, IterationRow, TrainConfig,
    TrainHooks, TrainState,
};

/// Creates the output directory, refusing to reuse a non-empty one unless
/// `force` is set.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let occupied = fs::read_dir(out)
            .map_err(|e| Error::io(out.display(), e))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(Error::InvalidConfig(format!(
                "output directory {} is not empty (pass --force to overwrite)",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out.display(), e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display(), e))
}

fn echo_config(config: &RunConfig, out: &Path) -> Result<()> {
    write_text(&out.join("config.toml"), &config.echo_toml()?)
}

/// `synth`: materialize a synthetic dataset to disk.
pub fn cmd_synth(synth: &SyntheticConfig, out: &Path, force: bool) -> Result<()> {
    synth.validate()?;
    prepare_out_dir(out, force)?;
    let dataset = generate_synthetic(synth)?;
    save_dataset(&dataset, out)?;
    println!(
        "wrote {} identities ({} train, {} test), {} images to {}",
        dataset.identities().len(),
        dataset.train_ids.len(),
        dataset.test_ids.len(),
        dataset.total_images(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    schema_version: u32,
    loss_kind: String,
    epochs_run: u64,
    iterations: u64,
    final_mean_loss: f64,
    final_mean_hinge: f64,
    first_epoch_mean_loss: f64,
    train_rank1_per_epoch: Vec<f64>,
    wall_seconds: f64,
}

/// `train`: run the descent loop on a dataset directory, streaming metrics
/// and writing checkpoints into the output directory.
pub fn cmd_train(config: &RunConfig, data: &Path, out: &Path, force: bool) -> Result<()> {
    config.validate()?;
    prepare_out_dir(out, force)?;
    echo_config(config, out)?;
    let dataset = load_dataset(data)?;
    train_into(config, &dataset, out)
}

/// Core of `train`, reusable on an in-memory dataset.
pub fn train_into(config: &RunConfig, dataset: &Dataset, out: &Path) -> Result<()> {
    let started = Instant::now();
    let train_config = config.train_config()?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics_file = fs::File::create(&metrics_path).map_err(|e| Error::io(metrics_path.display(), e))?;
    writeln!(metrics_file, "{}", IterationRow::csv_header()).map_err(|e| Error::io(metrics_path.display(), e))?;

    let mut on_iteration = |row: &IterationRow| -> Result<()> {
        writeln!(metrics_file, "{}", row.to_csv()).map_err(|e| Error::io("metrics.csv", e))
    };
    let hook_config = train_config.clone();
    let checkpoint_every = train_config.checkpoint_every;
    let out_dir: PathBuf = out.to_path_buf();
    let mut on_epoch = move |state: &TrainState| -> Result<EpochDecision> {
        if let Some(every) = checkpoint_every {
            if every > 0 && state.completed_epochs % every as u64 == 0 {
                let path = out_dir.join(format!("epoch_{:04}.ckpt", state.completed_epochs));
                save_checkpoint(&state.to_checkpoint(&hook_config), &path)?;
            }
        }
        Ok(EpochDecision::Continue)
    };
    let mut hooks = TrainHooks {
        on_iteration: Some(&mut on_iteration),
        on_epoch: Some(&mut on_epoch),
    };

    let mut state = TrainState::fresh(&config.net, train_config.seed)?;
    crate::trainer::train_epochs(&mut state, dataset, &train_config, train_config.epochs, &mut hooks)?;
    drop(hooks);

    save_checkpoint(&state.to_checkpoint(&train_config), &out.join("final.ckpt"))?;

    let summary = TrainSummary {
        schema_version: 1,
        loss_kind: train_config.loss.loss.name().to_string(),
        epochs_run: state.completed_epochs,
        iterations: state.completed_iterations,
        final_mean_loss: state.metrics.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN),
        final_mean_hinge: state.metrics.epochs.last().map(|e| e.mean_hinge).unwrap_or(f64::NAN),
        first_epoch_mean_loss: state.metrics.epochs.first().map(|e| e.mean_loss).unwrap_or(f64::NAN),
        train_rank1_per_epoch: state.metrics.epochs.iter().map(|e| e.train_rank1).collect(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary).map_err(|e| Error::io("summary.json", e))?,
    )?;
    println!(
        "trained {} epochs / {} iterations in {:.1}s; final mean loss {:.4} (first epoch {:.4})",
        summary.epochs_run, summary.iterations, summary.wall_seconds, summary.final_mean_loss, summary.first_epoch_mean_loss
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    schema_version: u32,
    repeats: usize,
    rank1_mean: f64,
    rank1_std: f64,
    rank5_mean: Option<f64>,
    map_mean: f64,
    map_std: f64,
    gallery_identities: usize,
    probes: usize,
}

/// `eval`: CMC/mAP of a checkpoint over a dataset's test split.
pub fn cmd_eval(checkpoint_path: &Path, data: &Path, out: &Path, eval: &EvalConfig, force: bool) -> Result<()> {
    prepare_out_dir(out, force)?;
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let dataset = load_dataset(data)?;
    if dataset.height != checkpoint.params.config.input_height
        || dataset.width != checkpoint.params.config.input_width
    {
        return Err(Error::InvalidConfig(format!(
            "checkpoint expects {}x{} inputs but the dataset provides {}x{}",
            checkpoint.params.config.input_height,
            checkpoint.params.config.input_width,
            dataset.height,
            dataset.width
        )));
    }
    let outcome = eval_into(&checkpoint, &dataset, eval, out)?;
    println!(
        "rank-1 {:.3} +- {:.3}, mAP {:.3} +- {:.3} over {} repeats",
        outcome.mean.rank(1),
        outcome.std.rank(1),
        outcome.map_mean,
        outcome.map_std,
        outcome.repeats
    );
    Ok(())
}

/// Core of `eval`, reusable on an in-memory dataset.
pub fn eval_into(checkpoint: &Checkpoint, dataset: &Dataset, eval: &EvalConfig, out: &Path) -> Result<RepeatOutcome> {
    let outcome = repeat_protocol(dataset, &checkpoint.params, eval.repeats, eval.seed)?;

    let mut cmc = Vec::new();
    write_cmc_csv(&outcome, &mut cmc)?;
    write_text(&out.join("cmc.csv"), &String::from_utf8_lossy(&cmc))?;

    let rankings = full_test_rankings(dataset, &checkpoint.params)?;
    let mut dump = Vec::new();
    write_rankings_csv(&rankings, eval.top_k, &mut dump)?;
    write_text(&out.join("rankings.csv"), &String::from_utf8_lossy(&dump))?;

    let summary = EvalSummary {
        schema_version: 1,
        repeats: outcome.repeats,
        rank1_mean: outcome.mean.rank(1),
        rank1_std: outcome.std.rank(1),
        rank5_mean: (outcome.mean.rates.len() >= 5).then(|| outcome.mean.rank(5)),
        map_mean: outcome.map_mean,
        map_std: outcome.map_std,
        gallery_identities: outcome.mean.rates.len(),
        probes: rankings.len(),
    };
    write_text(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary).map_err(|e| Error::io("summary.json", e))?,
    )?;
    Ok(outcome)
}

/// `gradcheck`: the finite-difference suite; prints one line per component.
pub fn cmd_gradcheck(size: GradCheckSize, seed: u64) -> Result<bool> {
    let report = run_gradcheck(size, &GradCheckOptions { seed, corrupt: false })?;
    print!("{}", report.render());
    Ok(report.passed)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub loss: String,
    pub residual_blocks: usize,
    pub seeds: usize,
    pub rank1_mean: f64,
    pub rank1_std: f64,
    pub rank5_mean: f64,
    pub rank5_std: f64,
}

/// `compare`: trains every requested loss kind (and residual depth) across
/// several seeds and tabulates mean/std rank-1 and rank-5.
pub fn cmd_compare(
    config: &RunConfig,
    dataset: &Dataset,
    losses: &[LossKind],
    seeds: usize,
    depths: &[usize],
    out: &Path,
) -> Result<Vec<AblationRow>> {
    if losses.is_empty() || seeds == 0 || depths.is_empty() {
        return Err(Error::InvalidConfig("compare needs at least one loss, one seed and one depth".into()));
    }
    let base_train = config.train_config()?;
    let mut rows = Vec::new();
    for &depth in depths {
        for &kind in losses {
            let mut rank1 = Vec::with_capacity(seeds);
            let mut rank5 = Vec::with_capacity(seeds);
            for seed_offset in 0..seeds {
                let net = NetConfig {
                    residual_blocks: depth,
                    ..config.net.clone()
                };
                let train = TrainConfig {
                    seed: base_train.seed + seed_offset as u64,
                    loss: crate::margin_loss::LossConfig {
                        loss: kind,
                        ..base_train.loss
                    },
                    ..base_train.clone()
                };
                let (params, _) = crate::trainer::train(dataset, &net, &train)?;
                let outcome = repeat_protocol(dataset, &params, config.eval.repeats, config.eval.seed)?;
                rank1.push(outcome.mean.rank(1));
                rank5.push(if outcome.mean.rates.len() >= 5 {
                    outcome.mean.rank(5)
                } else {
                    *outcome.mean.rates.last().unwrap()
                });
            }
            let stats = |v: &[f64]| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            };
            let (r1m, r1s) = stats(&rank1);
            let (r5m, r5s) = stats(&rank5);
            rows.push(AblationRow {
                loss: kind.name().to_string(),
                residual_blocks: depth,
                seeds,
                rank1_mean: r1m,
                rank1_std: r1s,
                rank5_mean: r5m,
                rank5_std: r5s,
            });
        }
    }

    let mut csv = String::from("# schema=reidrank.ablation.v1\nloss,residual_blocks,seeds,rank1_mean,rank1_std,rank5_mean,rank5_std\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.loss, row.residual_blocks, row.seeds, row.rank1_mean, row.rank1_std, row.rank5_mean, row.rank5_std
        ));
    }
    write_text(&out.join("ablation.csv"), &csv)?;
    Ok(rows)
}

/// Maps an error to the documented process exit code: 1 validation,
/// 2 numeric failure, 3 I/O or persistence.
pub fn exit_code_for(error: &Error) -> i32 {
    match error {
        Error::NonFinite { .. } => 2,
        Error::Io { .. } | Error::Checkpoint(_) => 3,
        _ => 1,
    }
}
