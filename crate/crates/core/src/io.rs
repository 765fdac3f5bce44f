//! CSV and JSON writers for estimator batches, gradient reports and
//! training histories.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::{EstimateBatch, EstimatorKind, Summary};
use crate::gradients::GradEstimate;
use crate::training::HistoryRow;

#[derive(Serialize)]
struct ChainRow {
    seed: u64,
    stream: u64,
    log_w: f64,
    log_a: f64,
    accepts: usize,
    mean_accept_prob: f64,
}

/// One row per chain: `seed, stream, log_w, log_a, accepts, mean_accept_prob`.
pub fn write_batch_csv<W: Write>(out: W, batch: &EstimateBatch) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &batch.records {
        w.serialize(ChainRow {
            seed: batch.seed,
            stream: r.stream,
            log_w: r.log_w,
            log_a: r.log_a,
            accepts: r.accepts,
            mean_accept_prob: r.mean_accept_prob,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// JSON summary of a batch. Wall time is supplied by the caller so the
/// batch itself stays bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub estimator: EstimatorKind,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: Summary,
    pub wall_time_secs: Option<f64>,
}

impl BatchSummary {
    pub fn new(batch: &EstimateBatch, wall_time_secs: Option<f64>) -> Self {
        Self {
            estimator: batch.kind,
            seed: batch.seed,
            summary: batch.summary.clone(),
            wall_time_secs,
        }
    }
}

pub fn write_json<W: Write, T: Serialize>(out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(out, value)?;
    Ok(())
}

/// `epoch, objective, elbo_mean, elbo_se, param_error, acceptance_rate`;
/// absent values are empty cells.
pub fn write_history_csv<W: Write>(out: W, history: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GradRow<'a> {
    replicate: usize,
    block: &'a str,
    index: usize,
    value: f64,
}

/// Long-format gradient samples: `replicate, block, index, value`.
pub fn write_grad_csv<W: Write>(out: W, grads: &[GradEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (rep, g) in grads.iter().enumerate() {
        for (block, values) in g.grads.iter() {
            for (index, &value) in values.iter().enumerate() {
                w.serialize(GradRow {
                    replicate: rep,
                    block,
                    index,
                    value,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
