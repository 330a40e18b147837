use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use metaworld::evaluation::{
    self, evaluate_metalearning, evaluate_multitask, Agent, EvalReport, RandomAgent, ResultRow, ScriptedAgent,
};
use metaworld::learn::{self, Algorithm, Checkpoint, DiagnosticsWriter, SacConfig, TrainConfig, TrainedAgent};
use metaworld::registry::{load_benchmark_file, make_benchmark, Benchmark, BenchmarkId, BenchmarkOptions};
use metaworld::task::scripted::scripted_policy;
use metaworld::task::{Catalog, TaskEnv};
use metaworld::vector::{Strategy, VectorEnv};
use metaworld::{EnvConfig, Error, Result, RewardVersion, TaskId};
use serde::Serialize;

use crate::{Algo, LearnArgs, RunArgs};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Ok(BufWriter::new(file))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish(mut w: impl Write, what: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(format!("writing {what}"), e))
}

fn parse_task(name: &str) -> Result<TaskId> {
    name.parse()
}

fn csv_error(e: csv::Error) -> Error {
    Error::format("csv output", e)
}

pub fn list(json: bool) -> Result<()> {
    let mut out = output(None)?;
    if json {
        #[derive(Serialize)]
        struct Listing<'a> {
            benchmarks: Vec<&'static str>,
            catalog: &'a Catalog,
        }
        let listing = Listing {
            benchmarks: BenchmarkId::ALL.iter().map(|b| b.as_str()).collect(),
            catalog: Catalog::builtin(),
        };
        serde_json::to_writer_pretty(&mut out, &listing).map_err(|e| Error::format("catalog", e))?;
        writeln!(out).map_err(|e| Error::io("writing catalog", e))?;
        return finish(out, "catalog");
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "task", "target", "success_threshold", "reward_template", "v1_stages"])
        .map_err(csv_error)?;
    for task in TaskId::ALL {
        let spec = task.spec();
        w.write_record([
            task.index().to_string(),
            task.name().to_string(),
            label(&spec.target),
            spec.success_threshold.to_string(),
            label(&spec.reward.template),
            spec.v1_stages.iter().map(label).collect::<Vec<_>>().join("+"),
        ])
        .map_err(csv_error)?;
    }
    let mut out = w.into_inner().map_err(|e| Error::format("catalog", e.error()))?;
    writeln!(out, "# benchmarks: {}", BenchmarkId::ALL.map(|b| b.as_str()).join(", "))
        .map_err(|e| Error::io("writing catalog", e))?;
    finish(out, "catalog")
}

/// Bare serde name of a unit enum value.
fn label<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value)
        .expect("enum serialization cannot fail")
        .trim_matches('"')
        .to_string()
}

fn single_env(task: &str, reward_version: RewardVersion, seed: u64) -> Result<TaskEnv> {
    let task = parse_task(task)?;
    TaskEnv::new(
        task,
        EnvConfig {
            reward_version,
            seed,
            ..EnvConfig::default()
        },
    )
}

fn check_variation(env: &TaskEnv, variation: u32) -> Result<()> {
    let v = env.config().variations_per_task;
    if variation >= v {
        return Err(Error::Validation(format!("variation {variation} out of range 0..{v}")));
    }
    Ok(())
}

pub fn reward_trace(
    task: &str,
    variation: u32,
    reward_version: RewardVersion,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let mut env = single_env(task, reward_version, seed)?;
    check_variation(&env, variation)?;
    env.reset(variation)?;
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["step", "reward", "success"]).map_err(csv_error)?;
    loop {
        let action = scripted_policy(env.task(), env.state());
        let r = env.step(&action)?;
        w.write_record([env.state().step.to_string(), r.reward.to_string(), r.info.success.to_string()])
            .map_err(csv_error)?;
        if r.truncated {
            break;
        }
    }
    w.flush().map_err(|e| Error::io("writing reward trace", e))
}

pub fn reward_tree(task: &str) -> Result<()> {
    let env = single_env(task, RewardVersion::V2, 0)?;
    let mut out = output(None)?;
    serde_json::to_writer_pretty(&mut out, env.reward_tree()).map_err(|e| Error::format("reward tree", e))?;
    writeln!(out).map_err(|e| Error::io("writing reward tree", e))?;
    finish(out, "reward tree")
}

pub fn trajectory(
    task: &str,
    variation: u32,
    steps: u32,
    reward_version: RewardVersion,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let mut env = single_env(task, reward_version, seed)?;
    check_variation(&env, variation)?;
    if steps == 0 || steps > env.config().horizon {
        return Err(Error::Validation(format!(
            "steps must lie in 1..={}",
            env.config().horizon
        )));
    }
    let mut obs = env.reset(variation)?;
    let mut w = csv::Writer::from_writer(output(out)?);
    let mut header = vec!["step".to_string()];
    header.extend((0..obs.0.len()).map(|i| format!("obs_{i}")));
    header.extend((0..4).map(|i| format!("action_{i}")));
    header.extend(["reward", "terminated", "truncated", "success"].map(String::from));
    w.write_record(&header).map_err(csv_error)?;
    for _ in 0..steps {
        let action = scripted_policy(env.task(), env.state());
        let r = env.step(&action)?;
        let mut rec = vec![env.state().step.to_string()];
        rec.extend(obs.0.iter().map(f64::to_string));
        rec.extend(action.iter().map(f64::to_string));
        rec.push(r.reward.to_string());
        rec.push(r.terminated.to_string());
        rec.push(r.truncated.to_string());
        rec.push(r.info.success.to_string());
        w.write_record(&rec).map_err(csv_error)?;
        obs = r.observation;
    }
    w.flush().map_err(|e| Error::io("writing trajectory", e))
}

/// Validated options shared by `evaluate` and `train`.
pub struct RunConfig {
    pub benchmark: String,
    pub options: BenchmarkOptions,
    pub algorithm: Algo,
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub out: PathBuf,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Validation(format!("invalid seed list '{s}'"));
    let mut seeds = Vec::new();
    for part in split_list(s) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a >= b {
                    return Err(bad());
                }
                seeds.extend(a..b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(Error::Validation("at least one seed is required".into()));
    }
    Ok(seeds)
}

impl RunConfig {
    pub(crate) fn from_args(a: RunArgs) -> Result<Self> {
        let (benchmark, mut options) = match (&a.benchmark, &a.config) {
            (_, Some(path)) => {
                let file = load_benchmark_file(path)?;
                (file.benchmark, file.options)
            }
            (Some(b), None) => (b.clone(), BenchmarkOptions::default()),
            (None, None) => return Err(Error::Validation("a benchmark is required".into())),
        };
        benchmark.parse::<BenchmarkId>().map_err(|_| {
            Error::Validation(format!(
                "unknown benchmark '{benchmark}' (expected one of {})",
                BenchmarkId::ALL.map(|b| b.as_str()).join(", ")
            ))
        })?;
        options.vector_strategy = a.vector_strategy.into();
        options.env.reward_version = a.reward_version.into();
        if let Some(t) = a.task {
            options.task = Some(t);
        }
        if let Some(names) = a.env_names {
            options.env_names = Some(split_list(&names));
        }
        if let Some(names) = a.test_env_names {
            options.test_env_names = Some(split_list(&names));
        }
        if let Some(v) = a.variations {
            options.env.variations_per_task = v;
        }
        if let Some(h) = a.horizon {
            options.env.horizon = h;
        }
        options.env.validate().map_err(|e| Error::Validation(e.to_string()))?;
        if a.steps == 0 {
            return Err(Error::Validation("the step budget must be at least 1".into()));
        }
        Ok(RunConfig {
            benchmark,
            options,
            algorithm: a.algo,
            seeds: parse_seeds(&a.seeds)?,
            steps: a.steps,
            out: a.out,
        })
    }

    fn options_for(&self, seed: u64) -> BenchmarkOptions {
        let mut o = self.options.clone();
        o.seed = seed;
        o.env.seed = seed;
        o
    }

    fn tag(&self, seed: u64) -> String {
        format!(
            "{}_{}_{}_seed{seed}",
            self.benchmark,
            self.algorithm.name(),
            self.options.env.reward_version
        )
    }

    fn write_results(&self, seed: u64, report: &EvalReport) -> Result<()> {
        let json_path = self.out.join(format!("report_{}.json", self.tag(seed)));
        let mut w = create(&json_path)?;
        serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::format("report", e))?;
        finish(w, "report")?;

        let rows = report.rows(
            &self.benchmark,
            &self.options.env.reward_version.to_string(),
            self.algorithm.name(),
            seed,
        );
        append_rows(&self.out.join("results.csv"), &rows)?;
        println!(
            "{} seed {seed}: mean success {:.4}, mean return {:.4}, episodes {}",
            self.benchmark, report.mean_success_rate, report.mean_returns, report.episodes_counted
        );
        Ok(())
    }
}

fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
    if fresh {
        return evaluation::write_rows(create(path)?, rows);
    }
    let file = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn run_protocol(agent: &mut dyn Agent, bench: &mut Benchmark) -> Result<EvalReport> {
    match bench {
        Benchmark::Multitask { envs, .. } => evaluate_multitask(agent, envs),
        Benchmark::Meta { test, .. } => evaluate_metalearning(agent, test),
    }
}

fn learned(algo: Algo) -> Option<Algorithm> {
    match algo {
        Algo::Sac => Some(Algorithm::Sac),
        Algo::Mtmhsac => Some(Algorithm::Mtmhsac),
        Algo::Pcgrad => Some(Algorithm::Pcgrad),
        Algo::Scripted | Algo::Random => None,
    }
}

pub fn evaluate(config: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let trained = match (learned(config.algorithm), checkpoint) {
        (Some(algo), Some(path)) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.algorithm != algo {
                return Err(Error::Validation(format!(
                    "checkpoint holds a {} agent, not {}",
                    ckpt.algorithm, algo
                )));
            }
            Some(ckpt.into_agent()?)
        }
        (Some(algo), None) => {
            return Err(Error::Validation(format!("evaluating {algo} needs --checkpoint")));
        }
        (None, _) => None,
    };
    for &seed in &config.seeds {
        let mut bench = make_benchmark(&config.benchmark, &config.options_for(seed))?;
        let report = match config.algorithm {
            Algo::Scripted => {
                let mut agent = match &bench {
                    Benchmark::Multitask { .. } => ScriptedAgent::new(),
                    Benchmark::Meta { test, .. } => ScriptedAgent::with_schedule(test),
                };
                run_protocol(&mut agent, &mut bench)?
            }
            Algo::Random => run_protocol(&mut RandomAgent::new(seed), &mut bench)?,
            _ => {
                let mut agent: TrainedAgent = trained.clone().expect("checkpoint loaded above");
                run_protocol(&mut agent, &mut bench)?
            }
        };
        config.write_results(seed, &report)?;
    }
    Ok(())
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    let widths: Vec<usize> = split_list(s)
        .iter()
        .map(|w| w.parse().map_err(|_| Error::Validation(format!("invalid layer width '{w}'"))))
        .collect::<Result<_>>()?;
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Validation("hidden widths must be positive".into()));
    }
    Ok(widths)
}

pub(crate) fn train(config: &RunConfig, args: &LearnArgs) -> Result<()> {
    let algorithm = learned(config.algorithm).ok_or_else(|| {
        Error::Validation(format!("{} agents are not trainable", config.algorithm.name()))
    })?;
    let sac = SacConfig {
        hidden: parse_hidden(&args.hidden)?,
        actor_lr: args.lr,
        critic_lr: args.lr,
        alpha_lr: args.lr,
        ..SacConfig::default()
    };
    for &seed in &config.seeds {
        let options = config.options_for(seed);
        let mut bench = make_benchmark(&config.benchmark, &options)?;
        let (train_envs, mut eval_envs) = match &mut bench {
            Benchmark::Multitask { set, envs } => {
                let eval = set.make_vector(&options.env, Strategy::Sync)?;
                (envs, eval)
            }
            Benchmark::Meta { train_set, train, .. } => {
                let eval = train_set.make_vector(&options.env, Strategy::Sync)?;
                (train, eval)
            }
        };
        let train_config = TrainConfig {
            algorithm,
            sac: sac.clone(),
            total_steps: config.steps,
            warmup_steps: args.warmup,
            batch_per_task: args.batch_size,
            eval_interval: args.eval_interval,
            target_success: args.target_success,
            seed,
            ..TrainConfig::default()
        };
        let tasks = train_envs.tasks().to_vec();
        let alpha_names: Vec<String> = if algorithm == Algorithm::Sac {
            vec!["all".into()]
        } else {
            tasks.iter().map(|t| t.to_string()).collect()
        };
        let diag_path = config
            .out
            .join(format!("diagnostics_{}.csv", config.tag(seed)));
        let mut diag = DiagnosticsWriter::new(create(&diag_path)?, &alpha_names)?;
        let outcome = learn::train(&train_config, train_envs, &mut eval_envs, |row| diag.write(row))?;
        let ckpt_path = config.out.join(format!("checkpoint_{}.json", config.tag(seed)));
        Checkpoint::from_agent(&outcome.agent, outcome.steps).save(&ckpt_path)?;
        let report = match &mut bench {
            Benchmark::Multitask { .. } => outcome.final_report,
            Benchmark::Meta { test, .. } => {
                let mut agent = outcome.agent;
                evaluate_metalearning(&mut agent, test)?
            }
        };
        config.write_results(seed, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchLine {
    envs: usize,
    strategy: Strategy,
    workers: usize,
    steps: u64,
    seconds: f64,
    env_steps_per_sec: f64,
}

/// Time `steps` vector steps with a fixed random action stream.
pub fn measure(envs: usize, steps: u64, strategy: Strategy, workers: usize) -> Result<f64> {
    let tasks: Vec<TaskId> = TaskId::ALL.iter().copied().cycle().take(envs).collect();
    let mut vector = VectorEnv::with_workers(&tasks, EnvConfig::default(), strategy, workers)?;
    let (obs, _) = vector.reset_all(0)?;
    let mut agent = RandomAgent::new(0);
    let actions: Vec<Vec<_>> = (0..steps).map(|_| agent.eval_action(&obs, &tasks)).collect();
    let start = Instant::now();
    for a in &actions {
        vector.step_all(a)?;
    }
    Ok(start.elapsed().as_secs_f64())
}

pub fn bench(envs: usize, steps: u64, strategies: &[Strategy], workers: Option<usize>) -> Result<()> {
    if envs == 0 || steps == 0 {
        return Err(Error::Validation("bench needs at least one env and one step".into()));
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = workers.unwrap_or(cores);
    let mut rates = Vec::new();
    for &strategy in strategies {
        let seconds = measure(envs, steps, strategy, workers)?;
        let line = BenchLine {
            envs,
            strategy,
            workers,
            steps,
            seconds,
            env_steps_per_sec: (envs as u64 * steps) as f64 / seconds,
        };
        rates.push(line.env_steps_per_sec);
        println!("{}", serde_json::to_string(&line).map_err(|e| Error::format("bench", e))?);
    }
    if let [sync, asynchronous] = rates[..] {
        println!(
            "{}",
            serde_json::json!({ "async_over_sync": asynchronous / sync, "cores": cores })
        );
    }
    Ok(())
}

fn collect_csvs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        let meta = fs::metadata(input).map_err(|e| Error::io(format!("reading {}", input.display()), e))?;
        if meta.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| Error::io(format!("listing {}", input.display()), e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("results")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Validation("no result files found".into()));
    }
    Ok(files)
}

pub fn aggregate(inputs: &[PathBuf], resamples: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for path in collect_csvs(inputs)? {
        let file = File::open(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        rows.extend(evaluation::read_rows(file, &path.display().to_string())?);
    }
    let table = evaluation::aggregate(&rows, resamples, seed)?;
    let mut w = csv::Writer::from_writer(output(out)?);
    for row in &table {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("writing aggregate", e))
}
