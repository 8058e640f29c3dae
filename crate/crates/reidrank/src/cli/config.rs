//! Declarative run configuration: one TOML file merging the network, loss,
//! trainer, synthesis and evaluation settings, with command-line overrides
//! applied on top. The fully resolved config is echoed into the output
//! directory of every run.
//!
//! The [loss] and [train] tables are flat, interface-friendly mirrors of
//! the domain configs; `train_config()` assembles the real thing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margin_loss::{LossConfig, LossKind, DEFAULT_FIXED_MARGIN};
use crate::network::NetConfig;
use crate::sampler::SyntheticConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSection {
    /// adaptive, contrastive or triplet.
    pub kind: String,
    /// Fixed margin for the contrastive/triplet baselines.
    pub margin: f64,
    pub mu: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossConfig::default();
        LossSection {
            kind: "adaptive".into(),
            margin: DEFAULT_FIXED_MARGIN,
            mu: d.mu,
            gamma: d.gamma,
            lambda: d.lambda,
        }
    }
}

impl LossSection {
    pub fn to_loss_config(&self) -> Result<LossConfig> {
        Ok(LossConfig {
            mu: self.mu,
            gamma: self.gamma,
            lambda: self.lambda,
            loss: loss_kind_from_name(&self.kind, Some(self.margin))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batches_per_epoch: Option<usize>,
    pub anchors: usize,
    pub positives: usize,
    pub negatives: usize,
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
    pub train_cmc_ids: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            lr_decay: d.lr_decay,
            epochs: d.epochs,
            batches_per_epoch: d.batches_per_epoch,
            anchors: d.anchors,
            positives: d.positives,
            negatives: d.negatives,
            seed: d.seed,
            checkpoint_every: d.checkpoint_every,
            train_cmc_ids: d.train_cmc_ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Random single-shot repeats of the evaluation protocol.
    pub repeats: usize,
    /// Gallery entries dumped per probe in the rankings CSV.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            repeats: 10,
            top_k: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub net: NetConfig,
    pub loss: LossSection,
    pub train: TrainSection,
    pub synth: SyntheticConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if config.schema_version == 0 {
            config.schema_version = 1;
        }
        if config.schema_version != 1 {
            return Err(Error::InvalidConfig(format!(
                "unsupported config schema_version {}",
                config.schema_version
            )));
        }
        Ok(config)
    }

    /// Assembles the trainer's config from the [train] and [loss] tables.
    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            learning_rate: self.train.learning_rate,
            lr_decay: self.train.lr_decay,
            epochs: self.train.epochs,
            batches_per_epoch: self.train.batches_per_epoch,
            anchors: self.train.anchors,
            positives: self.train.positives,
            negatives: self.train.negatives,
            seed: self.train.seed,
            checkpoint_every: self.train.checkpoint_every,
            train_cmc_ids: self.train.train_cmc_ids,
            loss: self.loss.to_loss_config()?,
        })
    }

    /// Validates every section, reporting all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let sections: Vec<Result<()>> = vec![
            self.net.shape_chain().map(|_| ()),
            self.train_config().and_then(|t| t.validate()),
            self.synth.validate(),
        ];
        for result in sections {
            match result {
                Err(Error::InvalidConfigList(list)) => problems.extend(list),
                Err(e) => problems.push(e.to_string()),
                Ok(()) => {}
            }
        }
        if self.eval.repeats == 0 {
            problems.push("eval.repeats must be at least 1".into());
        }
        if self.eval.top_k == 0 {
            problems.push("eval.top_k must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfigList(problems))
        }
    }

    pub fn echo_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Parses a loss-kind name, attaching the fixed margin for the baselines.
pub fn loss_kind_from_name(name: &str, margin: Option<f64>) -> Result<LossKind> {
    let margin = margin.unwrap_or(DEFAULT_FIXED_MARGIN);
    match name {
        "adaptive" => Ok(LossKind::Adaptive),
        "contrastive" => Ok(LossKind::Contrastive { margin }),
        "triplet" => Ok(LossKind::Triplet { margin }),
        other => Err(Error::InvalidConfig(format!(
            "unknown loss kind {other:?} (expected adaptive, contrastive or triplet)"
        ))),
    }
}
