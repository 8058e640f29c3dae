//! Adaptive margin gradient descent over anchor-based mini-batches:
//! forward, margin computation, loss gradients, backward, SGD update with
//! analytic weight decay, checkpointing and metrics logging.

pub mod checkpoint;
pub mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin_loss::{
    adaptive_batch, contrastive_batch, triplet_batch, BatchLoss, LossConfig, LossKind,
};
use crate::network::{backward, forward, init_params, NetConfig, ParamSet};
use crate::sampler::{make_minibatch, Dataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use metrics::{EpochRow, IterationRow, TrainMetrics, METRICS_SCHEMA};

/// Upper bound on the derived batches-per-epoch when the config leaves it
/// automatic.
pub const MAX_AUTO_BATCHES_PER_EPOCH: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Learning rate omega.
    pub learning_rate: f64,
    /// Optional per-epoch multiplicative decay of the step size
    /// (tau_h = omega * lr_decay^epoch); 1.0 disables it.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Mini-batches per epoch; None derives ceil(possible pairs / batch
    /// pairs) capped at [`MAX_AUTO_BATCHES_PER_EPOCH`].
    pub batches_per_epoch: Option<usize>,
    /// Anchors per batch (A).
    pub anchors: usize,
    /// Positives per anchor (M).
    pub positives: usize,
    /// Negatives per anchor (N).
    pub negatives: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (None disables periodic
    /// checkpoints; a final checkpoint is still written by the CLI).
    pub checkpoint_every: Option<usize>,
    /// Identities in the held-in subset used for the per-epoch train rank-1.
    pub train_cmc_ids: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            lr_decay: 1.0,
            epochs: 30,
            batches_per_epoch: None,
            anchors: 16,
            positives: 2,
            negatives: 6,
            seed: 0,
            checkpoint_every: None,
            train_cmc_ids: 8,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate >= 0.0) {
            problems.push(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0) {
            problems.push(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".into());
        }
        if self.anchors == 0 || self.positives == 0 || self.negatives == 0 {
            problems.push(format!(
                "batch spec must be positive, got A={}, M={}, N={}",
                self.anchors, self.positives, self.negatives
            ));
        }
        if self.batches_per_epoch == Some(0) {
            problems.push("batches_per_epoch must be at least 1 when set".into());
        }
        if let Err(e) = self.loss.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfigList(problems))
        }
    }

    /// Batches per epoch: the configured value, or the possible-pair count
    /// divided by the batch pair count, capped.
    pub fn resolved_batches_per_epoch(&self, dataset: &Dataset) -> usize {
        if let Some(b) = self.batches_per_epoch {
            return b;
        }
        let mut probe_images = 0usize;
        let mut gallery_images = 0usize;
        for &id in &dataset.train_ids {
            if let Ok(identity) = dataset.identity(id) {
                probe_images += identity.view_a.len();
                gallery_images += identity.view_b.len();
            }
        }
        let possible = probe_images.saturating_mul(gallery_images).max(1);
        let per_batch = self.anchors * (self.positives + self.negatives);
        possible.div_ceil(per_batch).clamp(1, MAX_AUTO_BATCHES_PER_EPOCH)
    }
}

/// Mutable state carried across epochs; also the unit of checkpointing.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ParamSet,
    pub completed_epochs: u64,
    pub completed_iterations: u64,
    pub metrics: TrainMetrics,
}

impl TrainState {
    pub fn fresh(net_config: &NetConfig, seed: u64) -> Result<TrainState> {
        Ok(TrainState {
            params: init_params(net_config, seed)?,
            completed_epochs: 0,
            completed_iterations: 0,
            metrics: TrainMetrics::default(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> TrainState {
        TrainState {
            params: ckpt.params,
            completed_epochs: ckpt.completed_epochs,
            completed_iterations: ckpt.completed_iterations,
            metrics: ckpt.metrics,
        }
    }

    pub fn to_checkpoint(&self, train_config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            completed_epochs: self.completed_epochs,
            completed_iterations: self.completed_iterations,
            train_config: train_config.clone(),
            metrics: self.metrics.clone(),
        }
    }
}

/// Whether to keep training after an epoch; hooks can stop a run early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochDecision {
    Continue,
    Stop,
}

/// Per-epoch and per-iteration callbacks. The epoch hook sees the full
/// updated state and may stop the run (early stopping, periodic
/// checkpoints, evaluation).
#[derive(Default)]
pub struct TrainHooks<'a> {
    #[allow(clippy::type_complexity)]
    pub on_iteration: Option<&'a mut dyn FnMut(&IterationRow) -> Result<()>>,
    #[allow(clippy::type_complexity)]
    pub on_epoch: Option<&'a mut dyn FnMut(&TrainState) -> Result<EpochDecision>>,
}

/// Plain SGD step with analytic weight decay:
/// omega_{h+1} = omega_h - step * (dL_S/dOmega + 2*lambda*Omega).
pub fn sgd_update(params: &mut ParamSet, grads: &crate::network::ParamGrads, step: f64, lambda: f64) -> Result<()> {
    params.sgd_step(grads, step, lambda)
}

fn evaluate_batch_loss(
    features: &crate::numerics::Tensor,
    batch: &crate::sampler::PairBatch,
    loss: &LossConfig,
) -> Result<BatchLoss> {
    match loss.loss {
        LossKind::Adaptive => adaptive_batch(features, &batch.pairs, loss.mu, loss.gamma),
        LossKind::Contrastive { margin } => contrastive_batch(features, &batch.pairs, margin),
        LossKind::Triplet { margin } => triplet_batch(features, &batch.pairs, &batch.triplets(), margin),
    }
}

/// Trains for `epochs` additional epochs on top of `state`. Each iteration:
/// sample an anchor-based batch, forward all unique images once, compute the
/// batch margins and feature gradients, run the network backward, apply the
/// SGD step with weight decay, then commit batch-norm running statistics.
/// Deterministic given (seed, epoch, batch): resuming from a checkpoint
/// reproduces the exact iteration stream of an uninterrupted run.
pub fn train_epochs(
    state: &mut TrainState,
    dataset: &Dataset,
    config: &TrainConfig,
    epochs: usize,
    hooks: &mut TrainHooks,
) -> Result<()> {
    config.validate()?;
    if dataset.height != state.params.config.input_height
        || dataset.width != state.params.config.input_width
        || dataset.channels != state.params.config.input_channels
    {
        return Err(Error::shape(
            "trainer input",
            format!(
                "dataset images of {}x{}x{}",
                state.params.config.input_channels, state.params.config.input_height, state.params.config.input_width
            ),
            format!("{}x{}x{}", dataset.channels, dataset.height, dataset.width),
        ));
    }

    let batches_per_epoch = config.resolved_batches_per_epoch(dataset);
    let first_epoch = state.completed_epochs;
    for epoch in first_epoch..first_epoch + epochs as u64 {
        let step = config.learning_rate * config.lr_decay.powi(epoch as i32);
        for b in 0..batches_per_epoch as u64 {
            let iteration = state.completed_iterations;
            let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(config.seed, epoch, b));
            let batch = make_minibatch(dataset, config.anchors, config.positives, config.negatives, &mut rng)?;
            let images = dataset.gather(&batch.images)?;

            let (features, trace) = forward(&state.params, &images)?;
            let batch_loss = evaluate_batch_loss(&features, &batch, &config.loss)?;
            let reg = config.loss.lambda * state.params.squared_norm();
            let total = batch_loss.similarity + reg;
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    iteration: iteration as usize,
                    quantity: format!("total loss (similarity {}, reg {reg})", batch_loss.similarity),
                });
            }

            let grads = backward(&state.params, &trace, &images, &batch_loss.feature_grads)?;
            state.params.sgd_step(&grads, step, config.loss.lambda)?;
            trace.commit_running_stats(&mut state.params);

            let row = IterationRow {
                iteration,
                epoch,
                loss: total,
                hinge: batch_loss.similarity,
                reg,
                s: batch_loss.margins.s,
                d: batch_loss.margins.d,
                m_p: batch_loss.margins.m_p,
                m_n: batch_loss.margins.m_n,
                active_fraction: batch_loss.active_fraction,
            };
            if !row.all_finite() {
                return Err(Error::NonFinite {
                    iteration: iteration as usize,
                    quantity: "metrics row".into(),
                });
            }
            if let Some(f) = hooks.on_iteration.as_deref_mut() {
                f(&row)?;
            }
            state.metrics.iterations.push(row);
            state.completed_iterations += 1;
        }

        let epoch_rows: Vec<&IterationRow> =
            state.metrics.iterations.iter().filter(|r| r.epoch == epoch).collect();
        let n = epoch_rows.len().max(1) as f64;
        let train_rank1 = crate::eval::train_subset_rank1(dataset, &state.params, config.train_cmc_ids)?;
        let epoch_row = EpochRow {
            epoch,
            mean_loss: epoch_rows.iter().map(|r| r.loss).sum::<f64>() / n,
            mean_hinge: epoch_rows.iter().map(|r| r.hinge).sum::<f64>() / n,
            train_rank1,
        };
        state.metrics.epochs.push(epoch_row);
        state.completed_epochs += 1;

        if let Some(f) = hooks.on_epoch.as_deref_mut() {
            if f(state)? == EpochDecision::Stop {
                break;
            }
        }
    }
    Ok(())
}

/// Per-iteration RNG seed, a pure function of (run seed, epoch, batch) so
/// interrupted and uninterrupted runs sample identical batches.
fn batch_seed(seed: u64, epoch: u64, batch: u64) -> u64 {
    let mut z = seed ^ 0xa076_1d64_78bd_642f;
    for part in [3u64, epoch, batch] {
        z ^= part.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Fresh-start training over `config.epochs` epochs.
pub fn train(dataset: &Dataset, net_config: &NetConfig, config: &TrainConfig) -> Result<(ParamSet, TrainMetrics)> {
    let mut state = TrainState::fresh(net_config, config.seed)?;
    let mut hooks = TrainHooks::default();
    train_epochs(&mut state, dataset, config, config.epochs, &mut hooks)?;
    Ok((state.params, state.metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margin_loss::{adaptive_batch_with_margins, regularizer};
    use crate::sampler::{generate_synthetic, SyntheticConfig};

    fn tiny_dataset(ids: usize, images: usize, seed: u64) -> Dataset {
        generate_synthetic(&SyntheticConfig {
            train_ids: ids,
            test_ids: 0,
            images_per_view: images,
            height: 24,
            width: 8,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batches_per_epoch: Some(2),
            anchors: 3,
            positives: 1,
            negatives: 2,
            train_cmc_ids: 4,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let dataset = tiny_dataset(4, 2, 1);
        let net = NetConfig::reduced();
        let config = TrainConfig {
            learning_rate: 0.0,
            ..tiny_train_config()
        };
        let initial = init_params(&net, config.seed).unwrap();
        let (params, metrics) = train(&dataset, &net, &config).unwrap();
        assert_eq!(params, initial);
        assert_eq!(metrics.iterations.len(), 4);
    }

    #[test]
    fn sequential_runs_are_bit_reproducible() {
        let dataset = tiny_dataset(5, 2, 2);
        let net = NetConfig::reduced();
        let config = tiny_train_config();
        let (p1, m1) = train(&dataset, &net, &config).unwrap();
        let (p2, m2) = train(&dataset, &net, &config).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn hinge_loss_decreases_over_training() {
        let dataset = tiny_dataset(8, 3, 3);
        let net = NetConfig::reduced();
        let config = TrainConfig {
            epochs: 8,
            batches_per_epoch: Some(3),
            anchors: 4,
            positives: 1,
            negatives: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let (_, metrics) = train(&dataset, &net, &config).unwrap();
        let first = metrics.epochs.first().unwrap().mean_hinge;
        let last = metrics.epochs.last().unwrap().mean_hinge;
        assert!(last < first, "hinge did not decrease: {first} -> {last}");
    }

    #[test]
    fn one_step_decreases_frozen_batch_loss_for_small_step() {
        let dataset = tiny_dataset(5, 2, 7);
        let net = NetConfig::reduced();
        let params = init_params(&net, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = make_minibatch(&dataset, 3, 1, 2, &mut rng).unwrap();
        let images = dataset.gather(&batch.images).unwrap();

        let (features, trace) = forward(&params, &images).unwrap();
        let lc = LossConfig::default();
        let loss0 = adaptive_batch(&features, &batch.pairs, lc.mu, lc.gamma).unwrap();
        let frozen = loss0.margins;
        let total0 = loss0.similarity + lc.lambda * regularizer(&params);
        let grads = backward(&params, &trace, &images, &loss0.feature_grads).unwrap();

        let mut decreased = false;
        for step in [1e-3, 1e-4] {
            let mut stepped = params.clone();
            stepped.sgd_step(&grads, step, lc.lambda).unwrap();
            let (f1, _) = forward(&stepped, &images).unwrap();
            let l1 = adaptive_batch_with_margins(&f1, &batch.pairs, &frozen).unwrap();
            let total1 = l1.similarity + lc.lambda * regularizer(&stepped);
            if total1 < total0 {
                decreased = true;
            }
        }
        assert!(decreased, "no step size decreased the frozen-batch loss");
    }

    #[test]
    fn adaptive_m_c_stays_positive_throughout() {
        let dataset = tiny_dataset(5, 2, 13);
        let net = NetConfig::reduced();
        let config = tiny_train_config();
        let (_, metrics) = train(&dataset, &net, &config).unwrap();
        for row in &metrics.iterations {
            assert!(row.m_n > row.m_p, "m_c <= 0 at iteration {}", row.iteration);
        }
    }

    #[test]
    fn baseline_losses_train_without_error() {
        let dataset = tiny_dataset(4, 2, 17);
        let net = NetConfig::reduced();
        for loss in [
            LossKind::Contrastive { margin: 1.0 },
            LossKind::Triplet { margin: 1.0 },
        ] {
            let config = TrainConfig {
                loss: LossConfig { loss, ..LossConfig::default() },
                ..tiny_train_config()
            };
            let (_, metrics) = train(&dataset, &net, &config).unwrap();
            assert_eq!(metrics.iterations.len(), 4);
            assert!(metrics.iterations.iter().all(|r| r.all_finite()));
        }
    }

    #[test]
    fn checkpoint_resume_reproduces_the_metrics_stream() {
        let dataset = tiny_dataset(5, 2, 19);
        let net = NetConfig::reduced();
        let config = TrainConfig {
            epochs: 4,
            ..tiny_train_config()
        };

        // Uninterrupted run.
        let (full_params, full_metrics) = train(&dataset, &net, &config).unwrap();

        // Interrupted: 2 epochs, checkpoint, resume 2 more.
        let mut state = TrainState::fresh(&net, config.seed).unwrap();
        let mut hooks = TrainHooks::default();
        train_epochs(&mut state, &dataset, &config, 2, &mut hooks).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        save_checkpoint(&state.to_checkpoint(&config), &path).unwrap();

        let mut resumed = TrainState::from_checkpoint(load_checkpoint(&path).unwrap());
        assert_eq!(resumed.params, state.params);
        // Resume for zero epochs leaves the state untouched.
        train_epochs(&mut resumed, &dataset, &config, 0, &mut hooks).unwrap();
        assert_eq!(resumed.params, state.params);

        train_epochs(&mut resumed, &dataset, &config, 2, &mut hooks).unwrap();
        assert_eq!(resumed.params, full_params);
        assert_eq!(resumed.metrics, full_metrics);
    }

    #[test]
    fn rejects_dataset_not_matching_network_input() {
        let dataset = tiny_dataset(4, 1, 23);
        let net = NetConfig::default();
        let err = train(&dataset, &net, &tiny_train_config()).unwrap_err();
        assert!(err.to_string().contains("230"), "{err}");
    }
}
