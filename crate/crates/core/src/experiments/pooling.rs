use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{mean_std, run_trials, trial_seed, Artifact, ExperimentResult, TrialRecord};
use crate::datagen::{generate_dataset, Dataset, GeneratorConfig, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::models::{init_model, ModelSpec, Pooling};
use crate::training::{split_validation, train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingConfig {
    /// Must provide `max(train_sizes) + train.val_count` training rows.
    pub data: GeneratorConfig,
    pub pool_kinds: Vec<Pooling>,
    pub train_sizes: Vec<usize>,
    pub train: TrainConfig,
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        PoolingConfig {
            data: GeneratorConfig {
                train_count: 4500,
                ..GeneratorConfig::default()
            },
            pool_kinds: Pooling::ALL.to_vec(),
            train_sizes: vec![125, 250, 500, 1000, 2000, 4000],
            train: TrainConfig {
                learning_rate: 5e-3,
                max_steps: 4000,
                eval_every: 100,
                ..TrainConfig::default()
            },
            n_seeds: 3,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolingCell {
    pub pooling: Pooling,
    pub train_size: usize,
    /// Test accuracy in points.
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolingReport {
    pub result: ExperimentResult,
    pub surface: Vec<PoolingCell>,
    /// Mean pooled minus unpooled accuracy at the smallest and the largest
    /// training size; NaN without an unpooled or pooled variant.
    pub delta_small: f64,
    pub delta_large: f64,
}

impl PoolingReport {
    pub fn cell(&self, pooling: Pooling, train_size: usize) -> Option<&PoolingCell> {
        self.surface.iter().find(|c| c.pooling == pooling && c.train_size == train_size)
    }

    /// Best and worst pooled mean and the unpooled mean at one size.
    pub fn extremes(&self, train_size: usize) -> (f64, f64, f64) {
        let pooled: Vec<f64> = self
            .surface
            .iter()
            .filter(|c| c.train_size == train_size && c.pooling != Pooling::None)
            .map(|c| c.mean)
            .collect();
        let best = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = pooled.iter().copied().fold(f64::INFINITY, f64::min);
        let none = self.cell(Pooling::None, train_size).map_or(f64::NAN, |c| c.mean);
        (best, worst, none)
    }

    pub fn surface_csv(&self) -> String {
        let mut s = String::from("pooling,train_size,mean,std\n");
        for c in &self.surface {
            let _ = writeln!(s, "{},{},{},{}", c.pooling.name(), c.train_size, c.mean, c.std);
        }
        s
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let summary = serde_json::json!({
            "delta_small": self.delta_small,
            "delta_large": self.delta_large,
        });
        Ok(vec![
            Artifact::json("result.json", &self.result)?,
            Artifact::text("surface.csv", self.surface_csv()),
            Artifact::json("summary.json", &summary)?,
        ])
    }
}

/// Training rows `[0, n)` of the fit split followed by the fixed
/// validation rows, so every size is selected on the same validation set.
fn subset(data: &Dataset, fit: &[usize], val: &[usize], n: usize) -> Dataset {
    let idx: Vec<usize> = fit[..n].iter().chain(val).copied().collect();
    Dataset {
        x_train: data.x_train.select_rows(&idx),
        y_train: idx.iter().map(|&i| data.y_train[i]).collect(),
        ..data.clone()
    }
}

/// Pooling kind × training size × seed grid of pooled CNNs.
pub fn run_pooling_grid(cfg: &PoolingConfig) -> Result<PoolingReport> {
    if cfg.n_seeds == 0 || cfg.pool_kinds.is_empty() || cfg.train_sizes.is_empty() {
        return Err(Error::Config("pooling grid needs kinds, sizes and seeds".into()));
    }
    let started = Instant::now();
    let data = generate_dataset(&cfg.data)?;
    let (fit, val) = split_validation(&data.y_train, NUM_CLASSES, cfg.train.val_count)?;
    if let Some(&n) = cfg.train_sizes.iter().find(|&&n| n == 0 || n > fit.len()) {
        return Err(Error::Config(format!(
            "train size {n} not in 1..={} (available after the validation split)",
            fit.len()
        )));
    }
    let (nk, ns) = (cfg.pool_kinds.len(), cfg.train_sizes.len());
    let trials = run_trials(nk * ns * cfg.n_seeds, |i| {
        let kind = cfg.pool_kinds[i / (ns * cfg.n_seeds)];
        let n = cfg.train_sizes[(i / cfg.n_seeds) % ns];
        let seed = trial_seed(cfg.seed, i % cfg.n_seeds);
        let d = subset(&data, &fit, &val, n);
        let model = init_model(&ModelSpec::pooled_cnn(kind).with_seed(seed))?;
        let res = train(&model, &d, &TrainConfig { seed, ..cfg.train.clone() })?;
        log::info!("pooling {} n={n} seed {seed}: {:.3}", kind.name(), res.best_point().test_acc);
        Ok(TrialRecord::new(format!("{}/{n}", kind.name()), seed)
            .metric("test_acc", res.best_point().test_acc)
            .metric("train_size", n as f64)
            .metric("best_step", res.best_step as f64))
    })?;
    let surface: Vec<PoolingCell> = cfg
        .pool_kinds
        .iter()
        .flat_map(|&pooling| cfg.train_sizes.iter().map(move |&n| (pooling, n)))
        .map(|(pooling, train_size)| {
            let group = format!("{}/{train_size}", pooling.name());
            let v: Vec<f64> = trials
                .iter()
                .filter(|t| t.group == group)
                .map(|t| 100.0 * t.metrics["test_acc"])
                .collect();
            let (mean, std) = mean_std(&v);
            PoolingCell {
                pooling,
                train_size,
                mean,
                std,
            }
        })
        .collect();
    let delta = |n: usize| {
        let pooled: Vec<f64> = surface
            .iter()
            .filter(|c| c.train_size == n && c.pooling != Pooling::None)
            .map(|c| c.mean)
            .collect();
        let none = surface
            .iter()
            .find(|c| c.train_size == n && c.pooling == Pooling::None)
            .map_or(f64::NAN, |c| c.mean);
        mean_std(&pooled).0 - none
    };
    let small = *cfg.train_sizes.iter().min().expect("non-empty");
    let large = *cfg.train_sizes.iter().max().expect("non-empty");
    Ok(PoolingReport {
        result: ExperimentResult::new("pooling", cfg, trials, started)?,
        delta_small: delta(small),
        delta_large: delta(large),
        surface,
    })
}
