use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{curves_csv, mean_std, run_trials, trial_seed, Artifact, ExperimentResult, TrialRecord};
use crate::datagen::{generate_dataset, GeneratorConfig};
use crate::error::{Error, Result};
use crate::models::{init_model, ModelSpec};
use crate::training::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkModel {
    pub name: String,
    pub spec: ModelSpec,
    /// Overrides the shared training config's learning rate.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    /// Overrides the shared step budget.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub data: GeneratorConfig,
    pub models: Vec<BenchmarkModel>,
    pub train: TrainConfig,
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let m = |name: &str, spec: ModelSpec, lr: f64| BenchmarkModel {
            name: name.into(),
            spec,
            learning_rate: Some(lr),
            max_steps: None,
        };
        BenchmarkConfig {
            data: GeneratorConfig::default(),
            models: vec![
                m("logistic", ModelSpec::logistic(), 1e-2),
                m("mlp", ModelSpec::mlp(&[100, 100]), 1e-2),
                m("cnn", ModelSpec::cnn(), 5e-3),
                // the recurrent model costs ~10 ms a step and has converged
                // on normal data by ~5k steps
                BenchmarkModel {
                    max_steps: Some(6000),
                    ..m("gru", ModelSpec::gru(32), 5e-3)
                },
            ],
            train: TrainConfig::default(),
            n_seeds: 3,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub normal_mean: f64,
    pub normal_std: f64,
    pub shuffled_mean: f64,
    pub shuffled_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub result: ExperimentResult,
    /// Test accuracy in percent, one row per model.
    pub table: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn row(&self, model: &str) -> Option<&BenchmarkRow> {
        self.table.iter().find(|r| r.model == model)
    }

    pub fn table_csv(&self) -> String {
        let mut s = String::from("model,normal_mean,normal_std,shuffled_mean,shuffled_std\n");
        for r in &self.table {
            let _ = writeln!(
                s,
                "{},{:.2},{:.2},{:.2},{:.2}",
                r.model, r.normal_mean, r.normal_std, r.shuffled_mean, r.shuffled_std
            );
        }
        s
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        Ok(vec![
            Artifact::json("result.json", &self.result)?,
            Artifact::text("table.csv", self.table_csv()),
            Artifact::text("curves.csv", curves_csv(&self.result.trials)),
        ])
    }
}

const VARIANTS: [&str; 2] = ["normal", "shuffled"];

/// Train every model on the normal and the shuffled dataset, `n_seeds`
/// times each, and tabulate mean test accuracy.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cfg.n_seeds == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    if cfg.models.is_empty() {
        return Err(Error::Config("no models to benchmark".into()));
    }
    let started = Instant::now();
    let normal = generate_dataset(&GeneratorConfig {
        shuffle_seq: false,
        ..cfg.data.clone()
    })?;
    let shuffled = generate_dataset(&GeneratorConfig {
        shuffle_seq: true,
        ..cfg.data.clone()
    })?;
    let per_model = VARIANTS.len() * cfg.n_seeds;
    let trials = run_trials(cfg.models.len() * per_model, |i| {
        let m = &cfg.models[i / per_model];
        let v = (i % per_model) / cfg.n_seeds;
        let seed = trial_seed(cfg.seed, i % cfg.n_seeds);
        let data = if v == 0 { &normal } else { &shuffled };
        let tc = TrainConfig {
            seed,
            learning_rate: m.learning_rate.unwrap_or(cfg.train.learning_rate),
            max_steps: m.max_steps.unwrap_or(cfg.train.max_steps),
            ..cfg.train.clone()
        };
        let model = init_model(&m.spec.clone().with_seed(seed))?;
        let res = train(&model, data, &tc)?;
        log::info!("benchmark {}/{} seed {seed}: {:.3}", m.name, VARIANTS[v], res.best_point().test_acc);
        let best = res.best_point().clone();
        let mut rec = TrialRecord::new(format!("{}/{}", m.name, VARIANTS[v]), seed)
            .metric("test_acc", best.test_acc)
            .metric("train_acc", best.train_acc)
            .metric("best_step", res.best_step as f64)
            .metric("stopped_at", res.stopped_at as f64)
            .metric("params", model.param_count() as f64);
        if let Some(v) = best.val_acc {
            rec = rec.metric("val_acc", v);
        }
        rec.curves = res.curves;
        Ok(rec)
    })?;
    let table = cfg
        .models
        .iter()
        .map(|m| {
            let stat = |variant: &str| {
                let group = format!("{}/{variant}", m.name);
                let acc: Vec<f64> = trials
                    .iter()
                    .filter(|t| t.group == group)
                    .map(|t| 100.0 * t.metrics["test_acc"])
                    .collect();
                mean_std(&acc)
            };
            let (normal_mean, normal_std) = stat("normal");
            let (shuffled_mean, shuffled_std) = stat("shuffled");
            BenchmarkRow {
                model: m.name.clone(),
                normal_mean,
                normal_std,
                shuffled_mean,
                shuffled_std,
            }
        })
        .collect();
    Ok(BenchmarkReport {
        result: ExperimentResult::new("benchmark", cfg, trials, started)?,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchmarkConfig {
        BenchmarkConfig {
            data: GeneratorConfig {
                train_count: 300,
                test_count: 100,
                ..GeneratorConfig::default()
            },
            models: vec![BenchmarkModel {
                name: "logistic".into(),
                spec: ModelSpec::logistic(),
                learning_rate: None,
                max_steps: None,
            }],
            train: TrainConfig {
                max_steps: 20,
                eval_every: 10,
                val_count: 100,
                ..TrainConfig::default()
            },
            n_seeds: 1,
            seed: 5,
        }
    }

    #[test]
    fn single_seed_has_zero_std_and_table_shape() {
        let rep = run_benchmark(&tiny()).unwrap();
        assert_eq!(rep.result.trials.len(), 2);
        let row = rep.row("logistic").unwrap();
        assert_eq!((row.normal_std, row.shuffled_std), (0.0, 0.0));
        assert!(rep.result.trials.iter().all(|t| t.seed == 5));
        let csv = rep.table_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("model,normal_mean,normal_std,shuffled_mean,shuffled_std\n"));
    }

    #[test]
    fn reruns_are_identical() {
        let a = run_benchmark(&tiny()).unwrap();
        let b = run_benchmark(&tiny()).unwrap();
        assert_eq!(a.result.trials, b.result.trials);
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn zero_seeds_rejected() {
        let cfg = BenchmarkConfig { n_seeds: 0, ..tiny() };
        assert!(matches!(run_benchmark(&cfg), Err(Error::Config(_))));
    }
}
