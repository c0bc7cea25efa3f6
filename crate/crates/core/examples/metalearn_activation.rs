//! Learn an activation function, parameterized by a small scalar network
//! pretrained to ELU, by differentiating early training loss.
//!
//!     cargo run --release --example metalearn_activation

use mnist1d::experiments::{metalearn_activation, MetaActConfig, BASELINES};

fn main() -> mnist1d::Result<()> {
    let report = metalearn_activation(&MetaActConfig::default())?;
    println!(
        "pretrained to ELU with max error {:.4}; pre-training curve gap {:.2}%",
        report.pretrain_error,
        100.0 * report.elu_fidelity
    );
    for b in BASELINES {
        println!("{b:<8} loss after unroll: {:.4}", report.final_loss(b));
    }
    for &(x, y) in report.curve.iter().step_by(50) {
        println!("phi({x:+.1}) = {y:+.3}");
    }
    Ok(())
}
