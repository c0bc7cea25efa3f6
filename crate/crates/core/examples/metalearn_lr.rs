//! Learn a learning rate by differentiating through unrolled SGD: first on
//! a quadratic with a known answer, then on an MNIST-1D MLP.
//!
//!     cargo run --release --example metalearn_lr

use mnist1d::experiments::{metalearn_lr, quadratic_meta_lr, quadratic_probe, MetaLrConfig};

fn main() -> mnist1d::Result<()> {
    let (loss, dlr) = quadratic_probe(2.0, 1.0, 20, 0.05)?;
    println!("quadratic: loss {loss:.4e}, dloss/dlr {dlr:.4e}");
    let lrs = quadratic_meta_lr(2.0, 1.0, 20, 0.05, 50, 1e-2)?;
    println!("quadratic lr after 50 outer steps: {:.4}", lrs.last().unwrap());

    let report = metalearn_lr(&MetaLrConfig::default())?;
    for (i, lr) in report.lr_trajectory.iter().enumerate().step_by(50) {
        println!("outer step {i:>4}: lr {lr:.4}");
    }
    let [low, mid, high] = report.bracket;
    println!(
        "lr* = {:.3}: loss {mid:.3} (lr*/10: {low:.3}, 10 lr*: {high:.3e})",
        report.final_lr
    );
    Ok(())
}
