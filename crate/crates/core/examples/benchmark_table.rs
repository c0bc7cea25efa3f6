//! The benchmark table: every model family on normal and shuffled data.
//! Three seeds take about fifteen minutes on one core.
//!
//!     cargo run --release --example benchmark_table -- [n_seeds]

use mnist1d::experiments::{run_benchmark, BenchmarkConfig};

fn main() -> mnist1d::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let n_seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let report = run_benchmark(&BenchmarkConfig {
        n_seeds,
        ..BenchmarkConfig::default()
    })?;
    println!("{:<10} {:>16} {:>16}", "model", "normal", "shuffled");
    for r in &report.table {
        println!(
            "{:<10} {:>9.1} ± {:<4.1} {:>9.1} ± {:<4.1}",
            r.model, r.normal_mean, r.normal_std, r.shuffled_mean, r.shuffled_std
        );
    }
    println!("({:.0}s)", report.result.wall_time);
    Ok(())
}
