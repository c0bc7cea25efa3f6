//! Train one model family on MNIST-1D, report test accuracy and round-trip
//! the best model through a checkpoint.
//!
//!     cargo run --release --example train_classifier -- [logistic|mlp|cnn|gru]

use mnist1d::datagen::{generate_dataset, GeneratorConfig};
use mnist1d::models::{init_model, load_checkpoint, save_checkpoint, ModelSpec};
use mnist1d::training::{evaluate, train, TrainConfig};

fn main() -> mnist1d::Result<()> {
    let kind = std::env::args().nth(1).unwrap_or_else(|| "mlp".into());
    let (spec, lr) = match kind.as_str() {
        "logistic" => (ModelSpec::logistic(), 1e-2),
        "mlp" => (ModelSpec::mlp(&[100, 100]), 1e-2),
        "cnn" => (ModelSpec::cnn(), 5e-3),
        "gru" => (ModelSpec::gru(32), 5e-3),
        other => return Err(mnist1d::Error::Config(format!("unknown model {other}"))),
    };
    let data = generate_dataset(&GeneratorConfig::default())?;
    let model = init_model(&spec)?;
    println!("{kind}: {} parameters", model.param_count());
    let cfg = TrainConfig {
        learning_rate: lr,
        ..TrainConfig::default()
    };
    let res = train(&model, &data, &cfg)?;
    for p in res.curves.iter().step_by(5) {
        println!(
            "step {:>5}  train loss {:.3}  val {:.3}  test {:.3}",
            p.step,
            p.train_loss,
            p.val_acc.unwrap_or(f64::NAN),
            p.test_acc
        );
    }
    println!("best step {} of {}: test accuracy {:.1}%", res.best_step, res.stopped_at, 100.0 * res.best_point().test_acc);

    let path = std::env::temp_dir().join(format!("mnist1d-{kind}.json"));
    save_checkpoint(&path, &res.best_model)?;
    let back = load_checkpoint(&path)?;
    let acc = evaluate(&back, &data.x_test, &data.y_test)?.accuracy;
    println!("reloaded {} -> test accuracy {:.1}%", path.display(), 100.0 * acc);
    Ok(())
}
