//! Test error against model size for one-hidden-layer MLPs trained to
//! interpolate a small noisy training set. Shortened by default; pass
//! `full` for the long schedule.
//!
//!     cargo run --release --example double_descent -- [full]

use mnist1d::experiments::{run_double_descent, DoubleDescentConfig};
use mnist1d::training::{LossKind, TrainConfig};

fn main() -> mnist1d::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let full = std::env::args().nth(1).as_deref() == Some("full");
    let defaults = DoubleDescentConfig::default();
    let cfg = if full {
        defaults
    } else {
        DoubleDescentConfig {
            widths: vec![2, 6, 10, 20, 40, 120],
            losses: vec![LossKind::Nll],
            train: TrainConfig {
                max_steps: 3000,
                eval_every: 3000,
                ..defaults.train.clone()
            },
            ..defaults
        }
    };
    let report = run_double_descent(&cfg)?;
    for c in &report.curves {
        println!("{:?} loss, peak at {:?} parameters", c.loss, c.peak_params());
        for p in &c.points {
            println!(
                "  width {:>3}  params {:>6}  train err {:.3}  test err {:.3}",
                p.width, p.params, p.train_err_mean, p.test_err_mean
            );
        }
    }
    for w in &report.result.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
