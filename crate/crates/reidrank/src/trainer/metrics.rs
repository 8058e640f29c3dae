//! Per-iteration and per-epoch training metrics and their CSV schema.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "reidrank.metrics.v1";

/// One row of the per-iteration metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: u64,
    pub epoch: u64,
    /// Total loss: similarity term plus lambda * regularizer.
    pub loss: f64,
    /// Similarity (hinge) term alone.
    pub hinge: f64,
    /// lambda * regularizer.
    pub reg: f64,
    /// Mean positive pair distance of the batch.
    pub s: f64,
    /// Mean negative pair distance of the batch.
    pub d: f64,
    pub m_p: f64,
    pub m_n: f64,
    /// Fraction of pairs (or triplets) with non-zero loss.
    pub active_fraction: f64,
}

/// Per-epoch summary, including rank-1 on a held-in training probe subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u64,
    pub mean_loss: f64,
    pub mean_hinge: f64,
    pub train_rank1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub iterations: Vec<IterationRow>,
    pub epochs: Vec<EpochRow>,
}

impl IterationRow {
    pub fn csv_header() -> String {
        format!("# schema={METRICS_SCHEMA}\niteration,epoch,loss,hinge,reg,s,d,m_p,m_n,active_fraction")
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.epoch,
            self.loss,
            self.hinge,
            self.reg,
            self.s,
            self.d,
            self.m_p,
            self.m_n,
            self.active_fraction
        )
    }

    pub fn all_finite(&self) -> bool {
        [self.loss, self.hinge, self.reg, self.s, self.d, self.m_p, self.m_n, self.active_fraction]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl TrainMetrics {
    pub fn write_csv(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "{}", IterationRow::csv_header()).map_err(|e| Error::io("metrics csv", e))?;
        for row in &self.iterations {
            writeln!(out, "{}", row.to_csv()).map_err(|e| Error::io("metrics csv", e))?;
        }
        Ok(())
    }

    pub fn mean_epoch_loss(&self, epoch: u64) -> Option<f64> {
        let rows: Vec<&IterationRow> = self.iterations.iter().filter(|r| r.epoch == epoch).collect();
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64)
    }
}
