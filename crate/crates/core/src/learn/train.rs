use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::{ReplayBuffer, Transition};
use super::sac::{Algorithm, NamedTensor, SacConfig, SacLearner};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_metalearning, evaluate_multitask, Agent, EvalReport, MetaLearningAgent, Rollout};
use crate::rng;
use crate::task::{Action, Mode, Observation, TaskId, ACTION_LEN, OBS_LEN};
use crate::vector::VectorEnv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub sac: SacConfig,
    /// Environment transitions summed over all vector slots.
    pub total_steps: u64,
    /// Transitions collected with uniform random actions before learning.
    pub warmup_steps: u64,
    pub batch_per_task: usize,
    pub buffer_capacity: usize,
    /// Gradient updates per vector step once warm.
    pub updates_per_step: usize,
    pub eval_interval: u64,
    /// Stop as soon as an evaluation reaches this mean success rate.
    pub target_success: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Mtmhsac,
            sac: SacConfig::default(),
            total_steps: 1_000_000,
            warmup_steps: 5_000,
            batch_per_task: 128,
            buffer_capacity: 1_000_000,
            updates_per_step: 1,
            eval_interval: 10_000,
            target_success: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        if self.total_steps == 0 || self.eval_interval == 0 {
            return Err(Error::Parameter("step budget and eval interval must be at least 1".into()));
        }
        if self.batch_per_task == 0 || self.buffer_capacity == 0 {
            return Err(Error::Parameter("batch size and buffer capacity must be at least 1".into()));
        }
        if let Some(t) = self.target_success {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Parameter("target_success must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// A learner bound to the task list it was trained on.
#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub learner: SacLearner,
    pub tasks: Vec<TaskId>,
}

impl TrainedAgent {
    /// Task slot for `task`; tasks outside the training set fall back to
    /// slot 0, which only descriptor-free learners can use meaningfully.
    fn slot(&self, task: TaskId) -> usize {
        self.tasks.iter().position(|&t| t == task).unwrap_or(0)
    }

    fn deterministic(&mut self, observations: &[Observation], tasks: &[TaskId]) -> Vec<Action> {
        let flat: Vec<f64> = observations.iter().flat_map(|o| o.0).collect();
        let slots: Vec<usize> = tasks.iter().map(|&t| self.slot(t)).collect();
        self.learner
            .act(&flat, &slots, true)
            .expect("observation and slot shapes are fixed")
    }
}

impl Agent for TrainedAgent {
    fn eval_action(&mut self, observations: &[Observation], tasks: &[TaskId]) -> Vec<Action> {
        self.deterministic(observations, tasks)
    }

    fn as_meta(&mut self) -> Option<&mut dyn MetaLearningAgent> {
        Some(self)
    }
}

/// Zero-shot: the policy does not change from the adaptation episodes.
impl MetaLearningAgent for TrainedAgent {
    fn adapt_action(&mut self, observations: &[Observation], tasks: &[TaskId]) -> Vec<Action> {
        self.deterministic(observations, tasks)
    }

    fn adapt(&mut self, _rollouts: &[Rollout]) {}
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub step: u64,
    /// Mean critic loss over the updates since the previous row.
    pub q_loss: f64,
    pub alpha: Vec<f64>,
    pub success_rate: f64,
}

/// Appends diagnostic rows as CSV: `step,q_loss,alpha_<slot>...,success_rate`.
pub struct DiagnosticsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(out: W, alpha_names: &[String]) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "q_loss".to_string()];
        header.extend(alpha_names.iter().map(|n| format!("alpha_{n}")));
        header.push("success_rate".into());
        inner
            .write_record(&header)
            .map_err(|e| Error::format("diagnostics csv", e))?;
        Ok(DiagnosticsWriter { inner })
    }

    pub fn write(&mut self, row: &DiagnosticRow) -> Result<()> {
        let mut rec = vec![row.step.to_string(), row.q_loss.to_string()];
        rec.extend(row.alpha.iter().map(f64::to_string));
        rec.push(row.success_rate.to_string());
        self.inner
            .write_record(&rec)
            .map_err(|e| Error::format("diagnostics csv", e))?;
        self.inner.flush().map_err(|e| Error::io("writing diagnostics", e))
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: TrainedAgent,
    pub diagnostics: Vec<DiagnosticRow>,
    pub steps: u64,
    pub final_report: EvalReport,
}

fn evaluate(agent: &mut TrainedAgent, envs: &mut VectorEnv) -> Result<EvalReport> {
    match envs.mode() {
        Mode::Multitask => evaluate_multitask(agent, envs),
        Mode::Meta => evaluate_metalearning(agent, envs),
    }
}

/// Train on `envs` (one slot per task), evaluating on `eval_envs` every
/// `eval_interval` transitions and at the end. `on_row` sees each
/// diagnostic row as it is produced.
pub fn train(
    config: &TrainConfig,
    envs: &mut VectorEnv,
    eval_envs: &mut VectorEnv,
    mut on_row: impl FnMut(&DiagnosticRow) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let tasks = envs.tasks().to_vec();
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].contains(t) {
            return Err(Error::Validation(format!("task '{t}' appears twice in the training set")));
        }
    }
    let n = tasks.len();
    let descriptor = envs.mode() == Mode::Multitask && n > 1;
    let mut sac = config.sac.clone();
    sac.gamma = envs.config().gamma;
    let learner = SacLearner::new(config.algorithm, sac, n, descriptor, config.seed)?;
    let mut agent = TrainedAgent { learner, tasks: tasks.clone() };
    let mut buffer = ReplayBuffer::new(n, config.buffer_capacity)?;
    let mut sampler = rng::stream(config.seed, &[0x5a3d]);
    let mut explore = rng::stream(config.seed, &[0xe4]);

    let slots: Vec<usize> = (0..n).collect();
    let (mut obs, _) = envs.reset_all(config.seed)?;
    let mut diagnostics = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    let mut steps = 0u64;
    let mut next_eval = config.eval_interval;
    let mut last_report = None;
    while steps < config.total_steps {
        let actions: Vec<Action> = if steps < config.warmup_steps {
            (0..n)
                .map(|_| std::array::from_fn(|_| explore.random_range(-1.0..=1.0)))
                .collect()
        } else {
            let flat: Vec<f64> = obs.iter().flat_map(|o| o.0).collect();
            agent.learner.act(&flat, &slots, false)?
        };
        let step = envs.step_all(&actions)?;
        for i in 0..n {
            let ended = step.terminated[i] || step.truncated[i];
            let next = if ended {
                step.infos[i].final_observation.expect("autoreset keeps the final observation")
            } else {
                step.observations[i]
            };
            buffer.push(Transition {
                observation: obs[i],
                action: actions[i],
                reward: step.rewards[i],
                next_observation: next,
                done: step.terminated[i],
                task: i,
            });
        }
        obs = step.observations;
        steps += n as u64;

        if steps >= config.warmup_steps {
            for _ in 0..config.updates_per_step {
                let batch = buffer.sample(config.batch_per_task, &mut sampler);
                let stats = agent.learner.update(&batch)?;
                loss_sum += stats.q_loss;
                loss_count += 1;
            }
        }

        if steps >= next_eval || steps >= config.total_steps {
            next_eval += config.eval_interval;
            let report = evaluate(&mut agent, eval_envs)?;
            let row = DiagnosticRow {
                step: steps,
                q_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN },
                alpha: agent.learner.alphas(),
                success_rate: report.mean_success_rate,
            };
            log::info!(
                "step {} q_loss {:.4e} success {:.3}",
                row.step,
                row.q_loss,
                row.success_rate
            );
            on_row(&row)?;
            diagnostics.push(row);
            (loss_sum, loss_count) = (0.0, 0);
            let done = config
                .target_success
                .is_some_and(|t| report.mean_success_rate >= t);
            last_report = Some(report);
            if done {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        agent,
        diagnostics,
        steps,
        final_report: last_report.expect("the loop evaluates before it exits"),
    })
}

const CHECKPOINT_FORMAT: &str = "metaworld-sac-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub algorithm: Algorithm,
    pub config: SacConfig,
    pub tasks: Vec<TaskId>,
    pub descriptor: bool,
    pub steps: u64,
    pub observation_len: usize,
    pub action_len: usize,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_agent(agent: &TrainedAgent, steps: u64) -> Self {
        let l = &agent.learner;
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            algorithm: l.algorithm(),
            config: l.config().clone(),
            tasks: agent.tasks.clone(),
            descriptor: l.has_descriptor(),
            steps,
            observation_len: OBS_LEN,
            action_len: ACTION_LEN,
            tensors: l.tensors(),
        }
    }

    pub fn into_agent(self) -> Result<TrainedAgent> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.observation_len != OBS_LEN || self.action_len != ACTION_LEN {
            return Err(Error::Validation("checkpoint was written for other space sizes".into()));
        }
        let mut learner =
            SacLearner::new(self.algorithm, self.config, self.tasks.len(), self.descriptor, 0)?;
        learner.load_tensors(&self.tensors)?;
        Ok(TrainedAgent {
            learner,
            tasks: self.tasks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ctx = || format!("writing checkpoint {}", path.display());
        let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::format(ctx(), e))?;
        w.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ctx = || format!("reading checkpoint {}", path.display());
        let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(ctx(), e))
    }
}
