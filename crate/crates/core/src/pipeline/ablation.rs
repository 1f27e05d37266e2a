use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Split, TrainConfig};
use super::metrics::Metrics;
use super::train::run_experiment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationAxis {
    Sigma,
    Lambda,
    DExt,
    LossMode,
    UpsampleMode,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 5] = [
        AblationAxis::Sigma,
        AblationAxis::Lambda,
        AblationAxis::DExt,
        AblationAxis::LossMode,
        AblationAxis::UpsampleMode,
    ];

    /// Also the config key the axis varies.
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Sigma => "sigma",
            AblationAxis::Lambda => "lambda",
            AblationAxis::DExt => "d_ext",
            AblationAxis::LossMode => "loss_mode",
            AblationAxis::UpsampleMode => "upsample_mode",
        }
    }

    /// Evaluation split that exposes the effect the axis controls.
    pub fn default_eval_split(self) -> Split {
        match self {
            AblationAxis::LossMode => Split::Ambiguous,
            AblationAxis::DExt => Split::Endpoint,
            _ => Split::Standard,
        }
    }

    pub fn default_values(self) -> &'static [&'static str] {
        match self {
            AblationAxis::Sigma => &["0.3", "0.5", "1"],
            AblationAxis::Lambda => &["0", "0.5", "1"],
            AblationAxis::DExt => &["0", "16"],
            AblationAxis::LossMode => &["smooth_l1_softargmax", "ce", "l1", "l1_cos"],
            AblationAxis::UpsampleMode => &["bilinear", "trilinear"],
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        AblationAxis::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ablation axis {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub value: String,
    pub seed: u64,
    pub metrics: Metrics,
    pub final_loss: f64,
    pub epochs_run: usize,
}

/// Seed-averaged metrics for one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub value: String,
    pub seeds: usize,
    pub epe: f64,
    pub epe_std: f64,
    pub d1: f64,
    pub err_gt1: f64,
    pub err_gt2: f64,
    pub err_gt3: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub eval_split: Split,
    pub runs: Vec<AblationRun>,
    pub summary: Vec<AblationSummary>,
}

impl AblationTable {
    pub fn summary_for(&self, value: &str) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.value == value)
    }
}

/// One train + evaluate per `(value, seed)`, run on up to `jobs` threads.
/// Results are ordered by value, then seed, independent of scheduling.
pub fn run_ablation(
    axis: AblationAxis,
    values: &[String],
    base: &TrainConfig,
    seeds: &[u64],
    jobs: usize,
) -> Result<AblationTable> {
    if values.len() < 2 {
        return Err(Error::invalid("an ablation needs at least two values"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("an ablation needs at least one seed"));
    }
    let mut tasks = Vec::new();
    for value in values {
        for seed in seeds {
            let mut cfg = base.clone();
            cfg.set(axis.as_str(), value).map_err(Error::InvalidArgument)?;
            cfg.seed = *seed;
            cfg.validate()?;
            tasks.push((value.clone(), cfg));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<AblationRun>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(value, cfg)| {
                let r = run_experiment(cfg)?;
                Ok(AblationRun {
                    value: value.clone(),
                    seed: cfg.seed,
                    metrics: r.metrics,
                    final_loss: r.outcome.history.last().map_or(f64::NAN, |h| h.loss),
                    epochs_run: r.outcome.history.len(),
                })
            })
            .collect()
    });
    let runs: Vec<AblationRun> = results.into_iter().collect::<Result<_>>()?;
    let summary = values
        .iter()
        .map(|value| {
            let cell: Vec<&Metrics> = runs.iter().filter(|r| &r.value == value).map(|r| &r.metrics).collect();
            let n = cell.len() as f64;
            let mean = |f: fn(&Metrics) -> f64| cell.iter().map(|m| f(m)).sum::<f64>() / n;
            let epe = mean(|m| m.epe);
            let var = cell.iter().map(|m| (m.epe - epe).powi(2)).sum::<f64>() / n;
            AblationSummary {
                value: value.clone(),
                seeds: cell.len(),
                epe,
                epe_std: var.sqrt(),
                d1: mean(|m| m.d1),
                err_gt1: mean(|m| m.err_gt1),
                err_gt2: mean(|m| m.err_gt2),
                err_gt3: mean(|m| m.err_gt3),
                bias: mean(|m| m.bias),
            }
        })
        .collect();
    Ok(AblationTable {
        axis,
        eval_split: base.eval_split,
        runs,
        summary,
    })
}
