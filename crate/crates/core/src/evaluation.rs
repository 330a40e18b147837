//! Evaluation protocols and cross-seed aggregation.
//!
//! Multi-task evaluation runs one episode per goal location of every task.
//! Meta evaluation runs [`MetaProtocol::adaptation_episodes`] episodes per
//! test task, hands them to the agent once, then runs
//! [`MetaProtocol::episodes_per_goal`] episodes per goal location. An episode
//! succeeds if the success flag holds at any step; returns are undiscounted.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::task::scripted::scripted_policy;
use crate::task::{sample_variation, state_from_observation, Action, Mode, Observation, TaskId};
use crate::vector::VectorEnv;

/// Action selection at evaluation time.
pub trait Agent {
    /// One action per vector slot; `tasks[i]` is the task running in slot `i`.
    fn eval_action(&mut self, observations: &[Observation], tasks: &[TaskId]) -> Vec<Action>;

    /// The adaptation hooks, if the agent has them.
    fn as_meta(&mut self) -> Option<&mut dyn MetaLearningAgent> {
        None
    }
}

/// An agent that adapts to a test task from a handful of episodes.
pub trait MetaLearningAgent: Agent {
    fn adapt_action(&mut self, observations: &[Observation], tasks: &[TaskId]) -> Vec<Action>;

    /// Called once per test task with that task's adaptation episodes.
    fn adapt(&mut self, rollouts: &[Rollout]);
}

/// One recorded episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub task: TaskId,
    pub variation: u32,
    /// `T + 1` observations including the final one.
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub successes: Vec<bool>,
}

impl Rollout {
    fn new(task: TaskId, variation: u32, first: Observation) -> Self {
        Rollout {
            task,
            variation,
            observations: vec![first],
            actions: Vec::new(),
            rewards: Vec::new(),
            successes: Vec::new(),
        }
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn succeeded(&self) -> bool {
        self.successes.iter().any(|&s| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adaptation,
    Evaluation,
}

/// One completed episode in an evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Visit {
    pub task: TaskId,
    pub variation: u32,
    pub phase: Phase,
    pub success: bool,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean_success_rate: f64,
    pub success_rate_per_task: BTreeMap<TaskId, f64>,
    pub mean_returns: f64,
    pub mean_return_per_task: BTreeMap<TaskId, f64>,
    pub episodes_counted: usize,
    #[serde(skip)]
    pub visits: Vec<Visit>,
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub benchmark: String,
    pub reward_version: String,
    pub algorithm: String,
    pub seed: u64,
    pub task: String,
    pub success_rate: f64,
    pub mean_return: f64,
}

impl EvalReport {
    fn from_visits(visits: Vec<Visit>, tasks: &[TaskId]) -> Self {
        let mut success_rate_per_task = BTreeMap::new();
        let mut mean_return_per_task = BTreeMap::new();
        for &task in tasks {
            let scored: Vec<&Visit> = visits
                .iter()
                .filter(|v| v.task == task && v.phase == Phase::Evaluation)
                .collect();
            let n = scored.len().max(1) as f64;
            let wins = scored.iter().filter(|v| v.success).count() as f64;
            let ret: f64 = scored.iter().map(|v| v.episode_return).sum();
            success_rate_per_task.insert(task, wins / n);
            mean_return_per_task.insert(task, ret / n);
        }
        let k = tasks.len() as f64;
        EvalReport {
            mean_success_rate: success_rate_per_task.values().sum::<f64>() / k,
            mean_returns: mean_return_per_task.values().sum::<f64>() / k,
            success_rate_per_task,
            mean_return_per_task,
            episodes_counted: visits.len(),
            visits,
        }
    }

    pub fn rows(&self, benchmark: &str, reward_version: &str, algorithm: &str, seed: u64) -> Vec<ResultRow> {
        self.success_rate_per_task
            .iter()
            .map(|(task, &rate)| ResultRow {
                benchmark: benchmark.to_string(),
                reward_version: reward_version.to_string(),
                algorithm: algorithm.to_string(),
                seed,
                task: task.to_string(),
                success_rate: rate,
                mean_return: self.mean_return_per_task[task],
            })
            .collect()
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::format("results csv", e))?;
    }
    w.flush().map_err(|e| Error::io("writing results csv", e))
}

pub fn read_rows<R: Read>(input: R, context: &str) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(context, e)))
        .collect()
}

fn check_unique(tasks: &[TaskId]) -> Result<()> {
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].contains(t) {
            return Err(Error::Protocol(format!(
                "task '{t}' occupies more than one slot; evaluation needs one slot per task"
            )));
        }
    }
    Ok(())
}

/// Run `episodes` complete episodes on every slot.
fn run_episodes<F>(
    envs: &mut VectorEnv,
    observations: &mut Vec<Observation>,
    episodes: u32,
    phase: Phase,
    mut act: F,
    visits: &mut Vec<Visit>,
) -> Result<Vec<Vec<Rollout>>>
where
    F: FnMut(&[Observation], &[TaskId]) -> Result<Vec<Action>>,
{
    let tasks = envs.tasks().to_vec();
    let n = tasks.len();
    let meta = envs.mode() == Mode::Meta;
    let mut rollouts: Vec<Vec<Rollout>> = vec![Vec::new(); n];
    let mut current: Vec<Option<Rollout>> = vec![None; n];
    let mut done = vec![0u32; n];
    let horizon = envs.config().horizon;
    let steps = u64::from(episodes) * u64::from(horizon);
    let mut tags: Vec<u32> = Vec::new();
    for _ in 0..steps {
        if meta && observations.iter().any(|o| o.goal().iter().any(|&g| g != 0.0)) {
            return Err(Error::Protocol("goal leaked into a meta-mode observation".into()));
        }
        let actions = act(observations, &tasks)?;
        if actions.len() != n {
            return Err(Error::Protocol(format!(
                "agent returned {} actions for {n} environments",
                actions.len()
            )));
        }
        let step = envs.step_all(&actions)?;
        tags.clear();
        for i in 0..n {
            let info = &step.infos[i];
            let rollout = current[i].get_or_insert_with(|| {
                Rollout::new(tasks[i], info.finished.variation, observations[i])
            });
            rollout.actions.push(actions[i]);
            rollout.rewards.push(step.rewards[i]);
            rollout.successes.push(info.step.success);
            if step.truncated[i] || step.terminated[i] {
                let mut finished = current[i].take().expect("rollout in progress");
                finished
                    .observations
                    .push(info.final_observation.expect("autoreset surfaces the final observation"));
                visits.push(Visit {
                    task: finished.task,
                    variation: finished.variation,
                    phase,
                    success: finished.succeeded(),
                    episode_return: finished.episode_return(),
                });
                done[i] += 1;
                rollouts[i].push(finished);
            } else {
                rollout.observations.push(step.observations[i]);
            }
        }
        *observations = step.observations;
    }
    debug_assert!(done.iter().all(|&d| d == episodes));
    Ok(rollouts)
}

/// Multi-task protocol: one episode per goal location per task.
pub fn evaluate_multitask(agent: &mut dyn Agent, envs: &mut VectorEnv) -> Result<EvalReport> {
    if envs.mode() != Mode::Multitask {
        return Err(Error::Protocol("multi-task evaluation needs goal-visible environments".into()));
    }
    let tasks = envs.tasks().to_vec();
    check_unique(&tasks)?;
    let (mut obs, _) = envs.reset_all(envs.config().seed)?;
    let mut visits = Vec::new();
    let episodes = envs.config().variations_per_task;
    run_episodes(
        envs,
        &mut obs,
        episodes,
        Phase::Evaluation,
        |o, t| Ok(agent.eval_action(o, t)),
        &mut visits,
    )?;
    Ok(EvalReport::from_visits(visits, &tasks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaProtocol {
    pub adaptation_episodes: u32,
    pub episodes_per_goal: u32,
}

impl Default for MetaProtocol {
    fn default() -> Self {
        MetaProtocol {
            adaptation_episodes: 10,
            episodes_per_goal: 3,
        }
    }
}

impl MetaProtocol {
    pub fn episodes_per_task(&self, variations: u32) -> u32 {
        self.adaptation_episodes + self.episodes_per_goal * variations
    }
}

/// Meta-learning protocol over a meta-test vector with the default counts.
pub fn evaluate_metalearning(agent: &mut dyn Agent, envs: &mut VectorEnv) -> Result<EvalReport> {
    evaluate_metalearning_with(agent, envs, MetaProtocol::default())
}

pub fn evaluate_metalearning_with(
    agent: &mut dyn Agent,
    envs: &mut VectorEnv,
    protocol: MetaProtocol,
) -> Result<EvalReport> {
    if envs.mode() != Mode::Meta {
        return Err(Error::Protocol("meta evaluation needs goal-hidden environments".into()));
    }
    let meta = agent
        .as_meta()
        .ok_or_else(|| Error::Protocol("agent has no adaptation hooks".into()))?;
    let tasks = envs.tasks().to_vec();
    check_unique(&tasks)?;
    let (mut obs, _) = envs.reset_all(envs.config().seed)?;
    let mut visits = Vec::new();
    let adaptation = run_episodes(
        envs,
        &mut obs,
        protocol.adaptation_episodes,
        Phase::Adaptation,
        |o, t| Ok(meta.adapt_action(o, t)),
        &mut visits,
    )?;
    for rollouts in &adaptation {
        meta.adapt(rollouts);
    }
    let episodes = protocol.episodes_per_goal * envs.config().variations_per_task;
    run_episodes(
        envs,
        &mut obs,
        episodes,
        Phase::Evaluation,
        |o, t| Ok(meta.eval_action(o, t)),
        &mut visits,
    )?;
    Ok(EvalReport::from_visits(visits, &tasks))
}

/// Expert controller acting from observations.
///
/// In goal-hidden mode it needs the goal schedule: it replays the vector's
/// seeding and autoreset order to know which variation each slot runs.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    schedule: Option<Schedule>,
}

#[derive(Debug, Clone)]
struct Schedule {
    seeds: Vec<u64>,
    horizon: u64,
    variations: u32,
    steps: u64,
}

impl ScriptedAgent {
    /// Reads goals from the observation.
    pub fn new() -> Self {
        ScriptedAgent { schedule: None }
    }

    /// Privileged variant that knows the goal schedule of `envs` from its
    /// next `reset_all`.
    pub fn with_schedule(envs: &VectorEnv) -> Self {
        let config = envs.config();
        ScriptedAgent {
            schedule: Some(Schedule {
                seeds: (0..envs.len() as u64).map(|i| config.seed + i).collect(),
                horizon: u64::from(config.horizon),
                variations: config.variations_per_task,
                steps: 0,
            }),
        }
    }

    fn act(&mut self, observations: &[Observation], tasks: &[TaskId]) -> Vec<Action> {
        let actions = observations
            .iter()
            .zip(tasks)
            .enumerate()
            .map(|(i, (obs, &task))| {
                let goal = match &self.schedule {
                    Some(s) => {
                        let episode = s.steps / s.horizon;
                        let variation = (episode % u64::from(s.variations)) as u32;
                        sample_variation(task, variation, s.seeds[i]).goal
                    }
                    None => Vector3::from_column_slice(obs.goal()),
                };
                scripted_policy(task, &state_from_observation(task, obs, goal))
            })
            .collect();
        if let Some(s) = &mut self.schedule {
            s.steps += 1;
        }
        actions
    }
}

impl Default for ScriptedAgent {
    fn default() -> Self {
        Self::new()
    }
}

impl Agent for ScriptedAgent {
    fn eval_action(&mut self, observations: &[Observation], tasks: &[TaskId]) -> Vec<Action> {
        self.act(observations, tasks)
    }

    fn as_meta(&mut self) -> Option<&mut dyn MetaLearningAgent> {
        Some(self)
    }
}

impl MetaLearningAgent for ScriptedAgent {
    fn adapt_action(&mut self, observations: &[Observation], tasks: &[TaskId]) -> Vec<Action> {
        self.act(observations, tasks)
    }

    fn adapt(&mut self, _rollouts: &[Rollout]) {}
}

/// Uniform random actions from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent {
            rng: rng::stream(seed, &[0x5eed]),
        }
    }

    fn act(&mut self, n: usize) -> Vec<Action> {
        (0..n)
            .map(|_| std::array::from_fn(|_| self.rng.random_range(-1.0..=1.0)))
            .collect()
    }
}

impl Agent for RandomAgent {
    fn eval_action(&mut self, observations: &[Observation], _tasks: &[TaskId]) -> Vec<Action> {
        self.act(observations.len())
    }

    fn as_meta(&mut self) -> Option<&mut dyn MetaLearningAgent> {
        Some(self)
    }
}

impl MetaLearningAgent for RandomAgent {
    fn adapt_action(&mut self, observations: &[Observation], _tasks: &[TaskId]) -> Vec<Action> {
        self.act(observations.len())
    }

    fn adapt(&mut self, _rollouts: &[Rollout]) {}
}

/// Interquartile mean with fractional trimming: each sorted entry `i`
/// covers `[i, i + 1)` and is weighted by its overlap with `[n/4, 3n/4]`.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Parameter("iqm of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Parameter("iqm input contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(trimmed_sorted(&sorted))
}

fn trimmed_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let (lo, hi) = (0.25 * n, 0.75 * n);
    let first = lo.floor() as usize;
    let last = (hi.ceil() as usize).min(sorted.len());
    let mut total = 0.0;
    for (i, &x) in sorted.iter().enumerate().take(last).skip(first) {
        let a = (i as f64).max(lo);
        let b = ((i + 1) as f64).min(hi);
        if b > a {
            total += (b - a) * x;
        }
    }
    total / (hi - lo)
}

/// Seeds × tasks success rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMatrix {
    values: Vec<Vec<f64>>,
}

impl SeedMatrix {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let tasks = values.first().map_or(0, Vec::len);
        if values.is_empty() || tasks == 0 {
            return Err(Error::Parameter("seed matrix needs at least one seed and one task".into()));
        }
        if values.iter().any(|row| row.len() != tasks) {
            return Err(Error::Parameter("seed matrix rows differ in length".into()));
        }
        if values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parameter("seed matrix entries must lie in [0, 1]".into()));
        }
        Ok(SeedMatrix { values })
    }

    pub fn seeds(&self) -> usize {
        self.values.len()
    }

    pub fn tasks(&self) -> usize {
        self.values[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// IQM over all seed-task entries.
    pub fn iqm(&self) -> f64 {
        let flat: Vec<f64> = self.values.iter().flatten().copied().collect();
        iqm(&flat).expect("matrix is non-empty and NaN-free")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// Set when a single seed makes resampling meaningless.
    pub degenerate: bool,
}

pub const DEFAULT_RESAMPLES: usize = 2000;

/// Percentile bootstrap CI of the IQM. Each resample draws seeds with
/// replacement independently within every task column.
pub fn stratified_bootstrap_ci(
    matrix: &SeedMatrix,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceInterval> {
    if n_resamples < 100 {
        return Err(Error::Parameter("n_resamples must be at least 100".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter("level must lie in (0, 1)".into()));
    }
    let point = matrix.iqm();
    let s = matrix.seeds();
    if s == 1 {
        log::warn!("bootstrap over a single seed is degenerate");
        return Ok(ConfidenceInterval {
            point,
            lo: point,
            hi: point,
            degenerate: true,
        });
    }
    let t = matrix.tasks();
    let mut rng = rng::stream(seed, &[0xb007]);
    let mut sample = vec![0.0; s * t];
    let mut stats = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        for task in 0..t {
            for k in 0..s {
                sample[task * s + k] = matrix.values[rng.random_range(0..s)][task];
            }
        }
        sample.sort_by(f64::total_cmp);
        stats.push(trimmed_sorted(&sample));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    Ok(ConfidenceInterval {
        point,
        lo: quantile_sorted(&stats, alpha),
        hi: quantile_sorted(&stats, 1.0 - alpha),
        degenerate: false,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (h - i as f64) * (sorted[j] - sorted[i])
}

/// One aggregate line: IQM and CI of one algorithm across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub benchmark: String,
    pub reward_version: String,
    pub algorithm: String,
    pub seeds: usize,
    pub tasks: usize,
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Percent IQM ± CI half-width, as in results tables.
    pub result: String,
}

/// Group raw rows by (benchmark, reward version, algorithm) and aggregate
/// each group across seeds.
pub fn aggregate(rows: &[ResultRow], n_resamples: usize, seed: u64) -> Result<Vec<AggregateRow>> {
    type Key = (String, String, String);
    let mut groups: BTreeMap<Key, BTreeMap<u64, BTreeMap<String, f64>>> = BTreeMap::new();
    for r in rows {
        let key = (r.benchmark.clone(), r.reward_version.clone(), r.algorithm.clone());
        let by_seed = groups.entry(key).or_default().entry(r.seed).or_default();
        if by_seed.insert(r.task.clone(), r.success_rate).is_some() {
            return Err(Error::Validation(format!(
                "duplicate row for seed {} task '{}'",
                r.seed, r.task
            )));
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((benchmark, reward_version, algorithm), by_seed) in groups {
        let tasks: Vec<String> = by_seed.values().next().map(|m| m.keys().cloned().collect()).unwrap_or_default();
        let mut matrix = Vec::with_capacity(by_seed.len());
        for (s, per_task) in &by_seed {
            let keys: Vec<&String> = per_task.keys().collect();
            if keys.len() != tasks.len() || keys.iter().zip(&tasks).any(|(a, b)| *a != b) {
                return Err(Error::Validation(format!(
                    "seed {s} of {algorithm} on {benchmark} covers a different task list"
                )));
            }
            matrix.push(per_task.values().copied().collect());
        }
        let matrix = SeedMatrix::new(matrix)?;
        let ci = stratified_bootstrap_ci(&matrix, n_resamples, 0.95, seed)?;
        let half = 0.5 * (ci.hi - ci.lo);
        out.push(AggregateRow {
            benchmark,
            reward_version,
            algorithm,
            seeds: matrix.seeds(),
            tasks: matrix.tasks(),
            iqm: ci.point,
            ci_low: ci.lo,
            ci_high: ci.hi,
            result: format!("{:.2} ± {:.2}", 100.0 * ci.point, 100.0 * half),
        });
    }
    Ok(out)
}
