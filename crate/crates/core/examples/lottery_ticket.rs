//! Find a lottery ticket by iterative magnitude pruning, compare it with a
//! random mask on original, reversed and permuted data, and show the
//! first-layer mask sorted by adjacency.
//!
//!     cargo run --release --example lottery_ticket -- [n_seeds]

use mnist1d::experiments::{run_lottery, sort_mask_for_display, LotteryConfig};

fn main() -> mnist1d::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let n_seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let report = run_lottery(&LotteryConfig {
        n_seeds,
        random_per_round: false,
        ..LotteryConfig::default()
    })?;
    println!("sparsity schedule: {:.3?}", report.sparsity_schedule);
    for a in &report.ablations {
        println!(
            "{:<9} ticket {:5.1}  random {:5.1}  margin {:+5.1}",
            a.data, a.ticket_mean, a.random_mean, a.margin
        );
    }
    println!("reinit ticket {:.1}, dense {:.1}", report.reinit_mean, report.dense_mean);
    for a in &report.adjacency {
        println!(
            "adjacency {} vs chance {:.1} ± {:.1} (z = {:.1})",
            a.count,
            a.chance_mean,
            a.chance_std,
            a.z_score()
        );
    }
    // top of the sorted first-layer mask, one character per weight
    let sorted = sort_mask_for_display(&report.first_layer_masks[0]);
    for r in 0..12.min(sorted.rows()) {
        let line: String = sorted.row(r).iter().map(|&v| if v != 0.0 { '#' } else { '.' }).collect();
        println!("{line}");
    }
    Ok(())
}
