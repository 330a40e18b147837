mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metaworld::vector::Strategy;
use metaworld::RewardVersion;

#[derive(Parser)]
#[command(name = "metaworld", version, about = "Multi-task and meta-RL manipulation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the task catalog and benchmark IDs.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Per-step rewards of the scripted expert as CSV (step,reward,success).
    RewardTrace {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        variation: u32,
        #[arg(long, value_enum, default_value_t = Version::V2)]
        reward_version: Version,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the shaped reward tree of a task as JSON.
    RewardTree {
        #[arg(long)]
        task: String,
    },
    /// Scripted rollout with full observations as CSV.
    Trajectory {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        variation: u32,
        #[arg(long, default_value_t = 100)]
        steps: u32,
        #[arg(long, value_enum, default_value_t = Version::V2)]
        reward_version: Version,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an agent on a benchmark, one report per seed.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Trained agent for the learned algorithms.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train an agent, writing checkpoints, diagnostics, and final results.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        learn: LearnArgs,
    },
    /// Measure vectorized stepping throughput.
    Bench {
        #[arg(long, default_value_t = 8)]
        envs: usize,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        #[arg(long, value_enum, default_value_t = BenchStrategy::Both)]
        vector_strategy: BenchStrategy,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate result CSVs into IQM and 95% CI per algorithm.
    Aggregate {
        /// Result CSV files or directories containing them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = metaworld::evaluation::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Version {
    V1,
    V2,
}

impl From<Version> for RewardVersion {
    fn from(v: Version) -> Self {
        match v {
            Version::V1 => RewardVersion::V1,
            Version::V2 => RewardVersion::V2,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VectorStrategy {
    Sync,
    Async,
}

impl From<VectorStrategy> for Strategy {
    fn from(v: VectorStrategy) -> Self {
        match v {
            VectorStrategy::Sync => Strategy::Sync,
            VectorStrategy::Async => Strategy::Async,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchStrategy {
    Sync,
    Async,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Sac,
    Mtmhsac,
    Pcgrad,
    Scripted,
    Random,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Sac => "sac",
            Algo::Mtmhsac => "mtmhsac",
            Algo::Pcgrad => "pcgrad",
            Algo::Scripted => "scripted",
            Algo::Random => "random",
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Benchmark ID such as MT10 or ML10-analog.
    #[arg(long, required_unless_present = "config")]
    benchmark: Option<String>,
    /// JSON benchmark definition (`{"benchmark": ..., "options": ...}`).
    #[arg(long, conflicts_with = "benchmark")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Version::V2)]
    reward_version: Version,
    #[arg(long, value_enum)]
    algo: Algo,
    /// Comma-separated seeds; `a..b` ranges are allowed.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Environment-step budget for training.
    #[arg(long, default_value_t = 1_000_000)]
    steps: u64,
    #[arg(long, value_enum, default_value_t = VectorStrategy::Sync)]
    vector_strategy: VectorStrategy,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Task for MT1/ML1.
    #[arg(long)]
    task: Option<String>,
    /// Comma-separated tasks for the custom benchmarks.
    #[arg(long)]
    env_names: Option<String>,
    /// Comma-separated test tasks for ML-custom.
    #[arg(long)]
    test_env_names: Option<String>,
    /// Goal variations per task.
    #[arg(long)]
    variations: Option<u32>,
    /// Episode length in steps.
    #[arg(long)]
    horizon: Option<u32>,
}

#[derive(Args)]
struct LearnArgs {
    /// Hidden layer widths.
    #[arg(long, default_value = "400,400")]
    hidden: String,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 5000)]
    warmup: u64,
    #[arg(long, default_value_t = 10_000)]
    eval_interval: u64,
    /// Stop early once the evaluation success rate reaches this value.
    #[arg(long)]
    target_success: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::List { json } => commands::list(json),
        Command::RewardTrace {
            task,
            variation,
            reward_version,
            seed,
            out,
        } => commands::reward_trace(&task, variation, reward_version.into(), seed, out.as_deref()),
        Command::RewardTree { task } => commands::reward_tree(&task),
        Command::Trajectory {
            task,
            variation,
            steps,
            reward_version,
            seed,
            out,
        } => commands::trajectory(&task, variation, steps, reward_version.into(), seed, out.as_deref()),
        Command::Evaluate { run, checkpoint } => {
            commands::RunConfig::from_args(run).and_then(|c| commands::evaluate(&c, checkpoint.as_deref()))
        }
        Command::Train { run, learn } => commands::RunConfig::from_args(run).and_then(|c| commands::train(&c, &learn)),
        Command::Bench {
            envs,
            steps,
            vector_strategy,
            workers,
        } => {
            let strategies: &[Strategy] = match vector_strategy {
                BenchStrategy::Sync => &[Strategy::Sync],
                BenchStrategy::Async => &[Strategy::Async],
                BenchStrategy::Both => &[Strategy::Sync, Strategy::Async],
            };
            commands::bench(envs, steps, strategies, workers)
        }
        Command::Aggregate {
            inputs,
            resamples,
            seed,
            out,
        } => commands::aggregate(&inputs, resamples, seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
