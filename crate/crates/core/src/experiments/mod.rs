//! One reproducible driver per result: the benchmark table, lottery
//! tickets, double descent, metalearned learning rates and activations,
//! and the pooling grid.
//!
//! Trials are independent and run on the ambient rayon pool. Every trial
//! derives its randomness from `(experiment seed, trial index)`, and
//! results are collected in trial order, so output never depends on the
//! number of worker threads.

mod benchmark;
mod double_descent;
mod lottery;
mod metalearn;
mod pooling;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::training::CurvePoint;

pub use benchmark::{run_benchmark, BenchmarkConfig, BenchmarkModel, BenchmarkReport, BenchmarkRow};
pub use double_descent::{
    detect_peak, run_double_descent, DoubleDescentConfig, DoubleDescentCurve, DoubleDescentPoint, DoubleDescentReport,
    INTERPOLATION_TOL,
};
pub use lottery::{
    find_lottery_ticket, lottery_ablations, mask_adjacency, prune_layer, random_mask_like, run_lottery, sort_mask_for_display,
    AblationRow, AdjacencyStats, LotteryConfig, LotteryReport, LotteryTicket, RoundRecord, SparsityPoint,
};
pub use metalearn::{
    elu_grid, metalearn_activation, metalearn_lr, pretrain_phi, quadratic_meta_lr, quadratic_probe, unrolled_losses, MetaActConfig,
    MetaActReport, MetaLrConfig, MetaLrReport, ACTIVATION_GRID, BASELINES,
};
pub use pooling::{run_pooling_grid, PoolingCell, PoolingConfig, PoolingReport};

/// A named output file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json<T: Serialize>(name: &str, value: &T) -> Result<Self> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        Ok(Artifact { name: name.into(), bytes })
    }

    pub fn text(name: &str, text: String) -> Self {
        Artifact {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Condition label, e.g. `cnn/shuffled`.
    pub group: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curves: Vec<CurvePoint>,
}

impl TrialRecord {
    pub fn new(group: impl Into<String>, seed: u64) -> Self {
        TrialRecord {
            group: group.into(),
            seed,
            metrics: BTreeMap::new(),
            curves: Vec::new(),
        }
    }

    pub fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.into(), value);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub config: serde_json::Value,
    pub trials: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Seconds; kept out of the serialized result so reruns are
    /// byte-identical (the run manifest records timing instead).
    #[serde(skip)]
    pub wall_time: f64,
}

impl ExperimentResult {
    pub fn new<C: Serialize>(name: &str, config: &C, trials: Vec<TrialRecord>, started: std::time::Instant) -> Result<Self> {
        Ok(ExperimentResult {
            name: name.into(),
            config: serde_json::to_value(config)?,
            aggregates: aggregate(&trials),
            trials,
            warnings: Vec::new(),
            wall_time: started.elapsed().as_secs_f64(),
        })
    }

    pub fn find(&self, group: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.group == group && a.metric == metric)
    }

    /// Mean of `metric` over trials of `group`, or NaN if absent.
    pub fn mean(&self, group: &str, metric: &str) -> f64 {
        self.find(group, metric).map_or(f64::NAN, |a| a.mean)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Mean and sample std for every `(group, metric)`, in order of first
/// appearance.
pub fn aggregate(trials: &[TrialRecord]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, String)> = Vec::new();
    let mut values: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for t in trials {
        for (m, &v) in &t.metrics {
            let key = (t.group.clone(), m.clone());
            if !values.contains_key(&key) {
                keys.push(key.clone());
            }
            values.entry(key).or_default().push(v);
        }
    }
    keys.into_iter()
        .map(|key| {
            let v = &values[&key];
            let (mean, std) = mean_std(v);
            Aggregate {
                group: key.0,
                metric: key.1,
                mean,
                std,
                n: v.len(),
            }
        })
        .collect()
}

/// Run `n` independent trials in parallel, preserving index order.
pub fn run_trials<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Seed of the `i`-th repetition under root seed `root`.
pub fn trial_seed(root: u64, i: usize) -> u64 {
    root.wrapping_add(i as u64)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Long-format training curves of every trial that recorded them.
pub fn curves_csv(trials: &[TrialRecord]) -> String {
    let mut s = String::from("group,seed,step,train_loss,train_acc,val_acc,test_acc\n");
    for t in trials {
        for c in &t.curves {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                t.group,
                t.seed,
                c.step,
                c.train_loss,
                c.train_acc,
                opt(c.val_acc),
                c.test_acc
            );
        }
    }
    s
}

/// Every aggregate as `group,metric,mean,std,n`.
pub fn aggregates_csv(aggs: &[Aggregate]) -> String {
    let mut s = String::from("group,metric,mean,std,n\n");
    for a in aggs {
        let _ = writeln!(s, "{},{},{},{},{}", a.group, a.metric, a.mean, a.std, a.n);
    }
    s
}
