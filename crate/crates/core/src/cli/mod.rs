//! The `mnist1d` command line: resolves layered configs (defaults, then a
//! strict JSON file, then flags) into a [`RunManifest`], runs it and
//! publishes the outputs atomically.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::datagen::{encode, generate_dataset, write_csv, GeneratorConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    metalearn_activation, metalearn_lr, run_benchmark, run_double_descent, run_lottery, run_pooling_grid, Artifact,
    BenchmarkConfig, DoubleDescentConfig, LotteryConfig, MetaActConfig, MetaLrConfig, PoolingConfig,
};
use crate::training::LossKind;

pub use manifest::{OutputDir, RunManifest, MANIFEST_NAME, TMP_SUFFIX};

const DEFAULT_OUT: &str = "mnist1d-out";

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ndataset format 1\ncheckpoint format mnist1d-checkpoint/1"
);

#[derive(Parser, Debug)]
#[command(name = "mnist1d", version, long_version = LONG_VERSION, about = "MNIST-1D dataset generation and experiments")]
#[command(subcommand_required = true, arg_required_else_help = true)]
pub struct Cli {
    /// Root seed; seeds both the data and the trials.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "MNIST1D_OUT")]
    pub out: Option<PathBuf>,
    /// JSON config layered over the defaults; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for independent trials; never changes results.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the dataset (binary plus train/test CSV).
    Gen {
        /// Apply the fixed index permutation to every example.
        #[arg(long)]
        shuffled: bool,
    },
    /// Test accuracy of each model family on normal and shuffled data.
    Benchmark {
        #[arg(long)]
        n_seeds: Option<usize>,
    },
    /// Iterative magnitude pruning, ablations and mask adjacency.
    Lottery {
        #[arg(long)]
        n_seeds: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Width sweep of one-hidden-layer MLPs on a label-noised subset.
    DoubleDescent {
        #[arg(long)]
        n_seeds: Option<usize>,
        /// Run a single loss instead of the configured list.
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Learn the inner SGD learning rate through an unrolled loop.
    MetalearnLr {
        #[arg(long)]
        outer_steps: Option<usize>,
        #[arg(long)]
        unroll: Option<usize>,
    },
    /// Learn the activation function through an unrolled loop.
    MetalearnAct {
        #[arg(long)]
        outer_steps: Option<usize>,
        #[arg(long)]
        unroll: Option<usize>,
    },
    /// Pooling kind by training set size grid of CNNs.
    Pooling {
        #[arg(long)]
        n_seeds: Option<usize>,
    },
    /// Re-execute a previous run from its manifest.
    Run {
        #[arg(long)]
        from_manifest: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Nll,
    Mse,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

/// A resolved invocation: what to run and where to write it.
#[derive(Debug)]
pub struct Plan {
    pub manifest: RunManifest,
    pub out: PathBuf,
    pub jobs: Option<usize>,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Run(Error::io(path, e)))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn set<T: Copy>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn planned<C: Serialize>(name: &str, seed: u64, cfg: &C) -> Result<RunManifest, CliError> {
    Ok(RunManifest::new(name, seed, serde_json::to_value(cfg).map_err(Error::from)?))
}

/// Apply the layering rule `defaults < config file < flags`.
pub fn resolve(cli: &Cli) -> Result<Plan, CliError> {
    if cli.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let file = cli.config.as_deref();
    // the root seed drives both data generation and trial seeds
    macro_rules! seeded {
        ($cfg:expr) => {
            if let Some(s) = cli.seed {
                $cfg.seed = s;
                $cfg.data.seed = s;
            }
        };
    }
    let manifest = match &cli.command {
        Command::Gen { shuffled } => {
            let mut c: GeneratorConfig = load_config(file)?;
            set(&mut c.seed, cli.seed);
            c.shuffle_seq |= *shuffled;
            planned("gen", c.seed, &c)?
        }
        Command::Benchmark { n_seeds } => {
            let mut c: BenchmarkConfig = load_config(file)?;
            seeded!(c);
            set(&mut c.n_seeds, *n_seeds);
            planned("benchmark", c.seed, &c)?
        }
        Command::Lottery { n_seeds, rounds } => {
            let mut c: LotteryConfig = load_config(file)?;
            seeded!(c);
            set(&mut c.n_seeds, *n_seeds);
            set(&mut c.rounds, *rounds);
            planned("lottery", c.seed, &c)?
        }
        Command::DoubleDescent { n_seeds, loss, max_steps } => {
            let mut c: DoubleDescentConfig = load_config(file)?;
            seeded!(c);
            set(&mut c.n_seeds, *n_seeds);
            if let Some(l) = loss {
                c.losses = vec![match l {
                    LossArg::Nll => LossKind::Nll,
                    LossArg::Mse => LossKind::Mse,
                }];
            }
            if let Some(m) = max_steps {
                c.train.max_steps = *m;
                c.train.eval_every = *m.max(&1);
            }
            planned("double-descent", c.seed, &c)?
        }
        Command::MetalearnLr { outer_steps, unroll } => {
            let mut c: MetaLrConfig = load_config(file)?;
            seeded!(c);
            set(&mut c.outer_steps, *outer_steps);
            set(&mut c.unroll, *unroll);
            planned("metalearn-lr", c.seed, &c)?
        }
        Command::MetalearnAct { outer_steps, unroll } => {
            let mut c: MetaActConfig = load_config(file)?;
            seeded!(c);
            set(&mut c.outer_steps, *outer_steps);
            set(&mut c.unroll, *unroll);
            planned("metalearn-act", c.seed, &c)?
        }
        Command::Pooling { n_seeds } => {
            let mut c: PoolingConfig = load_config(file)?;
            seeded!(c);
            set(&mut c.n_seeds, *n_seeds);
            planned("pooling", c.seed, &c)?
        }
        Command::Run { from_manifest } => {
            let conflicts: Vec<&str> = [("--seed", cli.seed.is_some()), ("--config", cli.config.is_some())]
                .iter()
                .filter(|(_, set)| *set)
                .map(|(n, _)| *n)
                .collect();
            if !conflicts.is_empty() {
                return Err(CliError::Usage(format!(
                    "--from-manifest conflicts with {}: a replay takes its whole config from the manifest",
                    conflicts.join(", ")
                )));
            }
            let m = RunManifest::load(from_manifest).map_err(|e| match e {
                Error::Json(j) => CliError::Usage(format!("manifest {}: {j}", from_manifest.display())),
                e => CliError::Run(e),
            })?;
            let dir = from_manifest.parent().map(Path::to_path_buf).unwrap_or_default();
            return Ok(Plan {
                manifest: RunManifest::new(&m.subcommand, m.seed, m.config),
                out: cli.out.clone().unwrap_or(dir),
                jobs: cli.jobs,
            });
        }
    };
    Ok(Plan {
        manifest,
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        jobs: cli.jobs,
    })
}

fn typed<T: DeserializeOwned>(v: &serde_json::Value) -> Result<T> {
    Ok(serde_json::from_value(v.clone())?)
}

/// Run one subcommand on its resolved config and collect its outputs.
pub fn execute(subcommand: &str, config: &serde_json::Value) -> Result<Vec<Artifact>> {
    match subcommand {
        "gen" => {
            let d = generate_dataset(&typed(config)?)?;
            Ok(vec![
                Artifact {
                    name: "dataset.bin".into(),
                    bytes: encode(&d)?,
                },
                Artifact::text("train.csv", write_csv(&d.x_train, &d.y_train)),
                Artifact::text("test.csv", write_csv(&d.x_test, &d.y_test)),
            ])
        }
        "benchmark" => run_benchmark(&typed(config)?)?.artifacts(),
        "lottery" => run_lottery(&typed(config)?)?.artifacts(),
        "double-descent" => run_double_descent(&typed(config)?)?.artifacts(),
        "metalearn-lr" => metalearn_lr(&typed(config)?)?.artifacts(),
        "metalearn-act" => metalearn_activation(&typed(config)?)?.artifacts(),
        "pooling" => run_pooling_grid(&typed(config)?)?.artifacts(),
        other => Err(Error::Config(format!("unknown subcommand {other:?} in manifest"))),
    }
}

/// Execute a plan: provisional manifest, run, publish.
pub fn run(plan: Plan) -> Result<RunManifest> {
    let started = Instant::now();
    let out = OutputDir::begin(&plan.out, &plan.manifest)?;
    log::info!("{} -> {}", plan.manifest.subcommand, plan.out.display());
    let artifacts = match plan.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| execute(&plan.manifest.subcommand, &plan.manifest.config))?,
        None => execute(&plan.manifest.subcommand, &plan.manifest.config)?,
    };
    out.commit(plan.manifest, &artifacts, started.elapsed().as_secs_f64())
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Full command-line entry point; returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.quiet);
    let res = resolve(&cli).and_then(|plan| run(plan).map_err(CliError::Run));
    match res {
        Ok(m) => {
            log::info!("wrote {} files in {:.1}s", m.outputs.len(), m.wall_time_s.unwrap_or(0.0));
            0
        }
        Err(e) => {
            eprintln!("mnist1d: {e}");
            e.exit_code()
        }
    }
}
