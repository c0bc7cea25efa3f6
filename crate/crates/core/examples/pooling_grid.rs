//! Pooling methods against training-set size for a small CNN. Reduced grid
//! by default; pass `full` for all sizes and three seeds.
//!
//!     cargo run --release --example pooling_grid -- [full]

use mnist1d::experiments::{run_pooling_grid, PoolingConfig};

fn main() -> mnist1d::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let full = std::env::args().nth(1).as_deref() == Some("full");
    let cfg = if full {
        PoolingConfig::default()
    } else {
        PoolingConfig {
            train_sizes: vec![125, 1000],
            n_seeds: 1,
            ..PoolingConfig::default()
        }
    };
    let report = run_pooling_grid(&cfg)?;
    print!("{}", report.surface_csv());
    println!(
        "pooled minus unpooled: {:+.1} points at the smallest size, {:+.1} at the largest",
        report.delta_small, report.delta_large
    );
    Ok(())
}
