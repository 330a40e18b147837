//! Named task sets and the benchmark factory.
//!
//! Built-in IDs: `MT1`, `MT10`, `MT25`, `MT50-analog`, `ML1`, `ML10-analog`,
//! `ML25`, `ML45-analog`, `MT-custom`, `ML-custom`. The `-analog` sets are
//! drawn from the 12-task catalog. `MT10` is the first ten catalog tasks.
//! `MT25`/`ML25` are built by [`construct_mixed_set`] from a recorded
//! solved/unsolved map.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::task::{EnvConfig, Mode, RewardVersion, TaskId};
use crate::vector::{Strategy, VectorEnv};

const SOLVED_JSON: &str = include_str!("../catalog/solved.v1.json");
/// Counter that separates meta-test variation streams from meta-train ones
/// when both splits share a task.
const TEST_STREAM: u64 = 0x7e57;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Multitask,
    MetaTrain,
    MetaTest,
}

impl SetKind {
    pub fn mode(self) -> Mode {
        match self {
            SetKind::Multitask => Mode::Multitask,
            SetKind::MetaTrain | SetKind::MetaTest => Mode::Meta,
        }
    }
}

/// An ordered, duplicate-free list of tasks with its mode and seeding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub name: String,
    pub tasks: Vec<TaskId>,
    pub kind: SetKind,
    pub variations_per_task: u32,
    pub seed: u64,
}

impl TaskSet {
    pub fn new(
        name: impl Into<String>,
        tasks: Vec<TaskId>,
        kind: SetKind,
        variations_per_task: u32,
        seed: u64,
    ) -> Result<Self> {
        let name = name.into();
        if tasks.is_empty() {
            return Err(Error::Validation(format!("task set '{name}' is empty")));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = tasks.iter().find(|t| !seen.insert(**t)) {
            return Err(Error::Validation(format!(
                "task set '{name}' lists '{dup}' twice"
            )));
        }
        if variations_per_task == 0 {
            return Err(Error::Validation("variations_per_task must be at least 1".into()));
        }
        Ok(TaskSet {
            name,
            tasks,
            kind,
            variations_per_task,
            seed,
        })
    }

    pub fn mode(&self) -> Mode {
        self.kind.mode()
    }

    pub fn contains(&self, task: TaskId) -> bool {
        self.tasks.contains(&task)
    }

    pub fn env_config(&self, base: &EnvConfig) -> EnvConfig {
        EnvConfig {
            mode: self.mode(),
            variations_per_task: self.variations_per_task,
            seed: self.seed,
            ..base.clone()
        }
    }

    /// Vector with one environment per task, in set order.
    pub fn make_vector(&self, base: &EnvConfig, strategy: Strategy) -> Result<VectorEnv> {
        VectorEnv::new(&self.tasks, self.env_config(base), strategy)
    }
}

/// One-hot task encoding relative to a set's ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor(pub Vec<f64>);

impl TaskDescriptor {
    pub fn one_hot(index: usize, len: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::Parameter(format!(
                "one-hot index {index} out of range for length {len}"
            )));
        }
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        Ok(TaskDescriptor(v))
    }

    pub fn index(&self) -> Option<usize> {
        let ones: Vec<usize> = (0..self.0.len()).filter(|&i| self.0[i] == 1.0).collect();
        let zeros = self.0.iter().filter(|&&x| x == 0.0).count();
        (ones.len() == 1 && zeros + 1 == self.0.len()).then(|| ones[0])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn descriptor_for(set: &TaskSet, task: TaskId) -> Result<TaskDescriptor> {
    let index = set
        .tasks
        .iter()
        .position(|&t| t == task)
        .ok_or_else(|| Error::Lookup(format!("task '{task}' is not in set '{}'", set.name)))?;
    TaskDescriptor::one_hot(index, set.tasks.len())
}

/// Pick `n_solved` tasks marked solved and `n_unsolved` marked unsolved,
/// shuffled by `seed`; the result keeps catalog order.
pub fn construct_mixed_set(
    per_task_solved: &BTreeMap<TaskId, bool>,
    n_solved: usize,
    n_unsolved: usize,
    seed: u64,
) -> Result<TaskSet> {
    if n_solved + n_unsolved == 0 {
        return Err(Error::Validation("mixed set must request at least one task".into()));
    }
    let pick = |solved: bool, n: usize, stream: u64| -> Result<Vec<TaskId>> {
        let mut pool: Vec<TaskId> = per_task_solved
            .iter()
            .filter(|(_, &s)| s == solved)
            .map(|(&t, _)| t)
            .collect();
        if pool.len() < n {
            let class = if solved { "solved" } else { "unsolved" };
            return Err(Error::Construction(format!(
                "requested {n} {class} tasks but only {} are available",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng::stream(seed, &[stream]));
        Ok(pool.into_iter().take(n).collect())
    };
    let mut tasks = pick(true, n_solved, 1)?;
    tasks.extend(pick(false, n_unsolved, 0)?);
    tasks.sort();
    TaskSet::new("mixed", tasks, SetKind::Multitask, 50, seed)
}

/// Solved/unsolved map from per-task SAC runs (50k steps, seed 0): a task is
/// solved if any periodic evaluation reached 50% success.
pub fn builtin_solved_map() -> BTreeMap<TaskId, bool> {
    serde_json::from_str(SOLVED_JSON).expect("bundled solved map is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchmarkId {
    #[serde(rename = "MT1")]
    Mt1,
    #[serde(rename = "MT10")]
    Mt10,
    #[serde(rename = "MT25")]
    Mt25,
    #[serde(rename = "MT50-analog")]
    Mt50Analog,
    #[serde(rename = "ML1")]
    Ml1,
    #[serde(rename = "ML10-analog")]
    Ml10Analog,
    #[serde(rename = "ML25")]
    Ml25,
    #[serde(rename = "ML45-analog")]
    Ml45Analog,
    #[serde(rename = "MT-custom")]
    MtCustom,
    #[serde(rename = "ML-custom")]
    MlCustom,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 10] = [
        BenchmarkId::Mt1,
        BenchmarkId::Mt10,
        BenchmarkId::Mt25,
        BenchmarkId::Mt50Analog,
        BenchmarkId::Ml1,
        BenchmarkId::Ml10Analog,
        BenchmarkId::Ml25,
        BenchmarkId::Ml45Analog,
        BenchmarkId::MtCustom,
        BenchmarkId::MlCustom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkId::Mt1 => "MT1",
            BenchmarkId::Mt10 => "MT10",
            BenchmarkId::Mt25 => "MT25",
            BenchmarkId::Mt50Analog => "MT50-analog",
            BenchmarkId::Ml1 => "ML1",
            BenchmarkId::Ml10Analog => "ML10-analog",
            BenchmarkId::Ml25 => "ML25",
            BenchmarkId::Ml45Analog => "ML45-analog",
            BenchmarkId::MtCustom => "MT-custom",
            BenchmarkId::MlCustom => "ML-custom",
        }
    }

    pub fn is_meta(self) -> bool {
        matches!(
            self,
            BenchmarkId::Ml1
                | BenchmarkId::Ml10Analog
                | BenchmarkId::Ml25
                | BenchmarkId::Ml45Analog
                | BenchmarkId::MlCustom
        )
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkId::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown benchmark '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkOptions {
    pub vector_strategy: Strategy,
    pub seed: u64,
    /// Task for `MT1`/`ML1`.
    pub task: Option<String>,
    /// Task list for the custom IDs (the train list for `ML-custom`).
    pub env_names: Option<Vec<String>>,
    /// Explicit `ML-custom` test list; defaults to the train tasks on a
    /// separate variation stream.
    pub test_env_names: Option<Vec<String>>,
    /// Solved map for `MT25`/`ML25`; defaults to the bundled record.
    pub solved: Option<BTreeMap<TaskId, bool>>,
    pub env: EnvConfig,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            vector_strategy: Strategy::Sync,
            seed: 0,
            task: None,
            env_names: None,
            test_env_names: None,
            solved: None,
            env: EnvConfig::default(),
        }
    }
}

/// Task sets of a benchmark, before any environment is built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkSets {
    Multitask(TaskSet),
    Meta { train: TaskSet, test: TaskSet },
}

impl BenchmarkSets {
    pub fn all_tasks(&self) -> Vec<TaskId> {
        match self {
            BenchmarkSets::Multitask(s) => s.tasks.clone(),
            BenchmarkSets::Meta { train, test } => {
                let mut v = train.tasks.clone();
                v.extend(&test.tasks);
                v
            }
        }
    }
}

#[derive(Debug)]
pub enum Benchmark {
    Multitask { set: TaskSet, envs: VectorEnv },
    Meta {
        train_set: TaskSet,
        test_set: TaskSet,
        train: VectorEnv,
        test: VectorEnv,
    },
}

fn parse_tasks(names: &[String]) -> Result<Vec<TaskId>> {
    names
        .iter()
        .map(|n| {
            n.parse::<TaskId>()
                .map_err(|_| Error::Validation(format!("unknown task name '{n}'")))
        })
        .collect()
}

fn single_task(options: &BenchmarkOptions, id: BenchmarkId) -> Result<TaskId> {
    let name = options
        .task
        .as_deref()
        .or_else(|| options.env_names.as_ref().and_then(|v| v.first().map(String::as_str)))
        .ok_or_else(|| Error::Validation(format!("{id} requires a task name")))?;
    name.parse()
}

fn remaining(exclude: &[TaskId]) -> Vec<TaskId> {
    TaskId::ALL
        .into_iter()
        .filter(|t| !exclude.contains(t))
        .collect()
}

/// Resolve a benchmark ID to its task sets.
pub fn benchmark_sets(id: BenchmarkId, options: &BenchmarkOptions) -> Result<BenchmarkSets> {
    let v = options.env.variations_per_task;
    let seed = options.seed;
    let mt = |tasks: Vec<TaskId>| -> Result<BenchmarkSets> {
        Ok(BenchmarkSets::Multitask(TaskSet::new(
            id.as_str(),
            tasks,
            SetKind::Multitask,
            v,
            seed,
        )?))
    };
    let ml = |train: Vec<TaskId>, test: Vec<TaskId>, test_seed: u64| -> Result<BenchmarkSets> {
        let train = TaskSet::new(format!("{id}-train"), train, SetKind::MetaTrain, v, seed)?;
        let test = TaskSet::new(format!("{id}-test"), test, SetKind::MetaTest, v, test_seed)?;
        Ok(BenchmarkSets::Meta { train, test })
    };
    let shared_test_seed = rng::mix(seed, &[TEST_STREAM]);
    let solved = || options.solved.clone().unwrap_or_else(builtin_solved_map);
    match id {
        BenchmarkId::Mt1 => mt(vec![single_task(options, id)?]),
        BenchmarkId::Mt10 => mt(TaskId::ALL[..10].to_vec()),
        BenchmarkId::Mt25 => mt(construct_mixed_set(&solved(), 3, 3, seed)?.tasks),
        BenchmarkId::Mt50Analog => mt(TaskId::ALL.to_vec()),
        BenchmarkId::MtCustom => {
            let names = options
                .env_names
                .as_ref()
                .ok_or_else(|| Error::Validation("MT-custom requires env_names".into()))?;
            mt(parse_tasks(names)?)
        }
        BenchmarkId::Ml1 => {
            let task = single_task(options, id)?;
            ml(vec![task], vec![task], shared_test_seed)
        }
        BenchmarkId::Ml10Analog => ml(TaskId::ALL[..9].to_vec(), TaskId::ALL[9..].to_vec(), seed),
        BenchmarkId::Ml45Analog => ml(TaskId::ALL[..10].to_vec(), TaskId::ALL[10..].to_vec(), seed),
        BenchmarkId::Ml25 => {
            let train = construct_mixed_set(&solved(), 3, 3, seed)?.tasks;
            let mut rest = remaining(&train);
            rest.shuffle(&mut rng::stream(seed, &[TEST_STREAM]));
            rest.truncate(3);
            rest.sort();
            ml(train, rest, seed)
        }
        BenchmarkId::MlCustom => {
            let names = options
                .env_names
                .as_ref()
                .ok_or_else(|| Error::Validation("ML-custom requires env_names".into()))?;
            let train = parse_tasks(names)?;
            match &options.test_env_names {
                Some(test_names) => {
                    let test = parse_tasks(test_names)?;
                    if let Some(t) = test.iter().find(|t| train.contains(t)) {
                        return Err(Error::Validation(format!(
                            "task '{t}' is in both the train and test lists"
                        )));
                    }
                    ml(train, test, seed)
                }
                None => {
                    let test = train.clone();
                    ml(train, test, shared_test_seed)
                }
            }
        }
    }
}

/// Build the vectorized environments of a benchmark.
pub fn make_benchmark(id: &str, options: &BenchmarkOptions) -> Result<Benchmark> {
    let id: BenchmarkId = id.parse()?;
    let strategy = options.vector_strategy;
    match benchmark_sets(id, options)? {
        BenchmarkSets::Multitask(set) => {
            let envs = set.make_vector(&options.env, strategy)?;
            Ok(Benchmark::Multitask { set, envs })
        }
        BenchmarkSets::Meta { train, test } => Ok(Benchmark::Meta {
            train: train.make_vector(&options.env, strategy)?,
            test: test.make_vector(&options.env, strategy)?,
            train_set: train,
            test_set: test,
        }),
    }
}

/// A benchmark definition as stored in a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFile {
    pub benchmark: String,
    #[serde(default)]
    pub options: BenchmarkOptions,
}

pub fn load_benchmark_file(path: &Path) -> Result<BenchmarkFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let file: BenchmarkFile = serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e))?;
    file.benchmark.parse::<BenchmarkId>()?;
    Ok(file)
}

impl BenchmarkOptions {
    pub fn with_reward_version(mut self, version: RewardVersion) -> Self {
        self.env.reward_version = version;
        self
    }
}
