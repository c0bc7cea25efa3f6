use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{mean_std, run_trials, trial_seed, Artifact, ExperimentResult, TrialRecord};
use crate::datagen::{generate_dataset, GeneratorConfig};
use crate::error::{Error, Result};
use crate::models::{init_model, param_count, ModelSpec};
use crate::training::{LossKind, OptimizerKind, TrainConfig};

/// Train error at or below which a model counts as interpolating.
pub const INTERPOLATION_TOL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoubleDescentConfig {
    pub data: GeneratorConfig,
    /// Training examples kept (a prefix of the generated training split).
    pub train_size: usize,
    pub label_noise: f64,
    /// Hidden widths of a one-hidden-layer MLP, ascending.
    pub widths: Vec<usize>,
    pub losses: Vec<LossKind>,
    /// Full-batch training; batch size is forced to `train_size`.
    pub train: TrainConfig,
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for DoubleDescentConfig {
    fn default() -> Self {
        DoubleDescentConfig {
            data: GeneratorConfig::default(),
            train_size: 500,
            label_noise: 0.15,
            widths: vec![2, 4, 6, 8, 10, 14, 20, 28, 40, 78, 120, 200, 400],
            losses: vec![LossKind::Nll, LossKind::Mse],
            train: TrainConfig {
                optimizer: OptimizerKind::Adam,
                learning_rate: 1e-2,
                max_steps: 50_000,
                eval_every: 50_000,
                early_stop_patience: 0,
                val_count: 0,
                ..TrainConfig::default()
            },
            n_seeds: 1,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleDescentPoint {
    pub width: usize,
    pub params: usize,
    pub train_err_mean: f64,
    pub train_err_std: f64,
    pub test_err_mean: f64,
    pub test_err_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleDescentCurve {
    pub loss: LossKind,
    pub points: Vec<DoubleDescentPoint>,
    /// Index into `points` of the highest interior local maximum of test
    /// error.
    pub peak: Option<usize>,
    pub interpolated: bool,
}

impl DoubleDescentCurve {
    pub fn peak_params(&self) -> Option<usize> {
        self.peak.map(|i| self.points[i].params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoubleDescentReport {
    pub result: ExperimentResult,
    pub curves: Vec<DoubleDescentCurve>,
}

impl DoubleDescentReport {
    pub fn curve(&self, loss: LossKind) -> Option<&DoubleDescentCurve> {
        self.curves.iter().find(|c| c.loss == loss)
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("loss,width,params,train_err_mean,train_err_std,test_err_mean,test_err_std,peak\n");
        for c in &self.curves {
            for (i, p) in c.points.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    loss_name(c.loss),
                    p.width,
                    p.params,
                    p.train_err_mean,
                    p.train_err_std,
                    p.test_err_mean,
                    p.test_err_std,
                    u8::from(c.peak == Some(i))
                );
            }
        }
        s
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        Ok(vec![
            Artifact::json("result.json", &self.result)?,
            Artifact::json("curves.json", &self.curves)?,
            Artifact::text("double_descent.csv", self.curve_csv()),
        ])
    }
}

fn loss_name(l: LossKind) -> &'static str {
    match l {
        LossKind::Nll => "nll",
        LossKind::Mse => "mse",
    }
}

/// Index of the highest interior point that exceeds both neighbours.
pub fn detect_peak(values: &[f64]) -> Option<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1])
        .max_by(|&a, &b| values[a].total_cmp(&values[b]))
}

/// Width sweep of one-hidden-layer MLPs on a small, label-noised training
/// set, trained long and without early stopping, once per loss.
pub fn run_double_descent(cfg: &DoubleDescentConfig) -> Result<DoubleDescentReport> {
    if cfg.n_seeds == 0 || cfg.widths.is_empty() || cfg.losses.is_empty() {
        return Err(Error::Config("double descent needs seeds, widths and losses".into()));
    }
    let specs: Vec<ModelSpec> = cfg.widths.iter().map(|&w| ModelSpec::mlp(&[w])).collect();
    let counts: Vec<usize> = specs.iter().map(param_count).collect();
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("widths must give strictly increasing parameter counts".into()));
    }
    let started = Instant::now();
    let data = generate_dataset(&cfg.data)?;
    if data.train_len() < cfg.train_size {
        return Err(Error::Config(format!(
            "train_size {} exceeds the {} generated examples",
            cfg.train_size,
            data.train_len()
        )));
    }
    let data = data.with_train_prefix(cfg.train_size);
    let nw = cfg.widths.len();
    let per_loss = nw * cfg.n_seeds;
    let trials = run_trials(cfg.losses.len() * per_loss, |i| {
        let loss = cfg.losses[i / per_loss];
        let w = (i % per_loss) / cfg.n_seeds;
        let seed = trial_seed(cfg.seed, i % cfg.n_seeds);
        let tc = TrainConfig {
            loss,
            seed,
            label_noise_frac: cfg.label_noise,
            batch_size: cfg.train_size,
            val_count: 0,
            early_stop_patience: 0,
            ..cfg.train.clone()
        };
        let model = init_model(&specs[w].clone().with_seed(seed))?;
        let res = crate::training::train(&model, &data, &tc)?;
        let last = res.curves.last().expect("final evaluation");
        log::info!(
            "double descent {} width {}: train err {:.3}, test err {:.3}",
            loss_name(loss),
            cfg.widths[w],
            1.0 - last.train_acc,
            1.0 - last.test_acc
        );
        Ok(TrialRecord::new(format!("{}/{}", loss_name(loss), cfg.widths[w]), seed)
            .metric("params", counts[w] as f64)
            .metric("train_err", 1.0 - last.train_acc)
            .metric("test_err", 1.0 - last.test_acc)
            .metric("train_loss", last.train_loss))
    })?;
    let mut result = ExperimentResult::new("double_descent", cfg, trials, started)?;
    let curves: Vec<DoubleDescentCurve> = cfg
        .losses
        .iter()
        .map(|&loss| {
            let points: Vec<DoubleDescentPoint> = cfg
                .widths
                .iter()
                .zip(&counts)
                .map(|(&width, &params)| {
                    let group = format!("{}/{width}", loss_name(loss));
                    let get = |m: &str| {
                        let v: Vec<f64> = result.trials.iter().filter(|t| t.group == group).map(|t| t.metrics[m]).collect();
                        mean_std(&v)
                    };
                    let (train_err_mean, train_err_std) = get("train_err");
                    let (test_err_mean, test_err_std) = get("test_err");
                    DoubleDescentPoint {
                        width,
                        params,
                        train_err_mean,
                        train_err_std,
                        test_err_mean,
                        test_err_std,
                    }
                })
                .collect();
            let errs: Vec<f64> = points.iter().map(|p| p.test_err_mean).collect();
            let interpolated = points.last().is_some_and(|p| p.train_err_mean <= INTERPOLATION_TOL);
            DoubleDescentCurve {
                loss,
                peak: detect_peak(&errs),
                interpolated,
                points,
            }
        })
        .collect();
    for c in &curves {
        if !c.interpolated {
            result
                .warnings
                .push(format!("{}: largest width did not interpolate the training set", loss_name(c.loss)));
        }
        if c.peak.is_none() {
            result.warnings.push(format!("{}: no test-error peak detected", loss_name(c.loss)));
        }
    }
    Ok(DoubleDescentReport { result, curves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_is_highest_interior_local_max() {
        assert_eq!(detect_peak(&[0.5, 0.4, 0.45, 0.3, 0.6, 0.2, 0.1]), Some(4));
        assert_eq!(detect_peak(&[0.5, 0.4, 0.3]), None);
        assert_eq!(detect_peak(&[0.9, 0.1, 0.8]), None);
        assert_eq!(detect_peak(&[0.1, 0.2, 0.2, 0.1]), None);
        assert_eq!(detect_peak(&[]), None);
    }

    #[test]
    fn default_grid_param_counts_increase() {
        let cfg = DoubleDescentConfig::default();
        let counts: Vec<usize> = cfg.widths.iter().map(|&w| param_count(&ModelSpec::mlp(&[w]))).collect();
        assert_eq!(counts[0], 112);
        assert!(counts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tiny_sweep_flags_missing_interpolation() {
        let cfg = DoubleDescentConfig {
            data: GeneratorConfig {
                train_count: 60,
                test_count: 30,
                ..GeneratorConfig::default()
            },
            train_size: 60,
            widths: vec![1, 2, 3],
            losses: vec![LossKind::Nll],
            train: TrainConfig {
                max_steps: 3,
                eval_every: 3,
                ..DoubleDescentConfig::default().train
            },
            ..DoubleDescentConfig::default()
        };
        let rep = run_double_descent(&cfg).unwrap();
        assert_eq!(rep.result.trials.len(), 3);
        let c = rep.curve(LossKind::Nll).unwrap();
        assert!(!c.interpolated);
        assert!(c.points[0].train_err_mean > 0.0);
        assert!(rep.result.warnings.iter().any(|w| w.contains("did not interpolate")));
        let bad = DoubleDescentConfig {
            widths: vec![4, 2],
            ..cfg
        };
        assert!(matches!(run_double_descent(&bad), Err(Error::Config(_))));
    }
}
