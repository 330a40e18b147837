//! Batched stepping of N environments.
//!
//! Both strategies run the same per-slot code; the async strategy only
//! changes which thread runs it. Each worker owns a contiguous block of
//! slots and replies over its own channel, so results come back in index
//! order and every stream is bit-identical to the sync strategy.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver, Sender};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Action, EnvConfig, Mode, Observation, StepInfo, TaskEnv, TaskId, ACTION_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Sync,
    Async,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" => Ok(Strategy::Sync),
            "async" => Ok(Strategy::Async),
            _ => Err(Error::Validation(format!("unknown vector strategy '{s}'"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Sync => "sync",
            Strategy::Async => "async",
        })
    }
}

/// Identity of the episode a slot is running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EpisodeTag {
    pub task: TaskId,
    pub variation: u32,
}

/// Per-index step diagnostics. On truncation the slot has already been
/// reset; `final_observation` and `final_info` describe the finished
/// episode and `tag` the new one.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorInfo {
    pub step: StepInfo,
    pub tag: EpisodeTag,
    pub final_observation: Option<Observation>,
    pub final_info: Option<StepInfo>,
    /// Episode that produced this transition.
    pub finished: EpisodeTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStep {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    pub infos: Vec<VectorInfo>,
}

#[derive(Debug, Clone)]
struct Slot {
    env: TaskEnv,
    variation: u32,
}

struct SlotStep {
    observation: Observation,
    reward: f64,
    terminated: bool,
    truncated: bool,
    info: VectorInfo,
}

impl Slot {
    fn tag(&self) -> EpisodeTag {
        EpisodeTag {
            task: self.env.task(),
            variation: self.variation,
        }
    }

    fn reset(&mut self, seed: u64) -> Result<(Observation, EpisodeTag)> {
        self.env.set_seed(seed);
        self.variation = 0;
        let obs = self.env.reset(0)?;
        Ok((obs, self.tag()))
    }

    fn step(&mut self, action: &Action) -> Result<SlotStep> {
        let finished = self.tag();
        let result = self.env.step(action)?;
        let mut info = VectorInfo {
            step: result.info.clone(),
            tag: finished,
            final_observation: None,
            final_info: None,
            finished,
        };
        let observation = if result.truncated || result.terminated {
            self.variation = (self.variation + 1) % self.env.config().variations_per_task;
            let fresh = self.env.reset(self.variation)?;
            info.tag = self.tag();
            info.final_observation = Some(result.observation);
            info.final_info = Some(result.info);
            fresh
        } else {
            result.observation
        };
        Ok(SlotStep {
            observation,
            reward: result.reward,
            terminated: result.terminated,
            truncated: result.truncated,
            info,
        })
    }
}

enum Command {
    Reset(u64),
    Step(Vec<Action>),
}

enum Reply {
    Reset(Result<Vec<(Observation, EpisodeTag)>>),
    Step(Result<Vec<SlotStep>>),
}

struct Worker {
    range: Range<usize>,
    commands: Option<Sender<Command>>,
    replies: Receiver<Reply>,
    handle: Option<JoinHandle<()>>,
}

fn worker_loop(mut slots: Vec<Slot>, first: usize, commands: Receiver<Command>, replies: Sender<Reply>) {
    for command in commands {
        let reply = match command {
            Command::Reset(seed) => Reply::Reset(
                slots
                    .iter_mut()
                    .enumerate()
                    .map(|(k, s)| s.reset(seed + (first + k) as u64))
                    .collect(),
            ),
            Command::Step(actions) => Reply::Step(
                slots
                    .iter_mut()
                    .zip(&actions)
                    .map(|(s, a)| s.step(a))
                    .collect(),
            ),
        };
        if replies.send(reply).is_err() {
            return;
        }
    }
}

enum Backend {
    Sync(Vec<Slot>),
    Async(Vec<Worker>),
}

/// N environments stepped in lockstep with autoreset.
pub struct VectorEnv {
    strategy: Strategy,
    tasks: Vec<TaskId>,
    config: EnvConfig,
    backend: Backend,
    ready: bool,
}

impl fmt::Debug for VectorEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorEnv")
            .field("strategy", &self.strategy)
            .field("tasks", &self.tasks)
            .field("mode", &self.config.mode)
            .finish()
    }
}

impl VectorEnv {
    /// One environment per entry of `tasks`, all sharing `config`.
    pub fn new(tasks: &[TaskId], config: EnvConfig, strategy: Strategy) -> Result<Self> {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self::with_workers(tasks, config, strategy, workers)
    }

    /// As [`VectorEnv::new`] with an explicit async worker count.
    pub fn with_workers(
        tasks: &[TaskId],
        config: EnvConfig,
        strategy: Strategy,
        workers: usize,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Parameter("a vector needs at least one environment".into()));
        }
        if workers == 0 {
            return Err(Error::Parameter("worker count must be positive".into()));
        }
        let slots = tasks
            .iter()
            .enumerate()
            .map(|(i, &task)| {
                let env = TaskEnv::new(
                    task,
                    EnvConfig {
                        seed: config.seed + i as u64,
                        ..config.clone()
                    },
                )?;
                Ok(Slot { env, variation: 0 })
            })
            .collect::<Result<Vec<_>>>()?;
        let backend = match strategy {
            Strategy::Sync => Backend::Sync(slots),
            Strategy::Async => Backend::Async(spawn_workers(slots, workers)?),
        };
        Ok(VectorEnv {
            strategy,
            tasks: tasks.to_vec(),
            config,
            backend,
            ready: false,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Reset every slot to variation 0; slot `i` is seeded with `seed + i`.
    pub fn reset_all(&mut self, seed: u64) -> Result<(Vec<Observation>, Vec<EpisodeTag>)> {
        let pairs: Vec<(Observation, EpisodeTag)> = match &mut self.backend {
            Backend::Sync(slots) => slots
                .iter_mut()
                .enumerate()
                .map(|(i, s)| s.reset(seed + i as u64))
                .collect::<Result<_>>()?,
            Backend::Async(workers) => {
                for w in workers.iter() {
                    send(w, Command::Reset(seed))?;
                }
                let mut all = Vec::with_capacity(self.tasks.len());
                for w in workers.iter() {
                    match w.replies.recv() {
                        Ok(Reply::Reset(r)) => all.extend(r?),
                        _ => return Err(worker_gone()),
                    }
                }
                all
            }
        };
        self.ready = true;
        Ok(pairs.into_iter().unzip())
    }

    /// Step every slot with its action; truncated slots autoreset to their
    /// next variation.
    pub fn step_all(&mut self, actions: &[Action]) -> Result<VectorStep> {
        if actions.len() != self.tasks.len() {
            return Err(Error::Parameter(format!(
                "got {} actions for {} environments",
                actions.len(),
                self.tasks.len()
            )));
        }
        if !self.ready {
            return Err(Error::Protocol("step_all called before reset_all".into()));
        }
        let steps: Vec<SlotStep> = match &mut self.backend {
            Backend::Sync(slots) => slots
                .iter_mut()
                .zip(actions)
                .map(|(s, a)| s.step(a))
                .collect::<Result<_>>()?,
            Backend::Async(workers) => {
                for w in workers.iter() {
                    send(w, Command::Step(actions[w.range.clone()].to_vec()))?;
                }
                let mut all = Vec::with_capacity(actions.len());
                for w in workers.iter() {
                    match w.replies.recv() {
                        Ok(Reply::Step(r)) => all.extend(r?),
                        _ => return Err(worker_gone()),
                    }
                }
                all
            }
        };
        let n = steps.len();
        let mut out = VectorStep {
            observations: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            terminated: Vec::with_capacity(n),
            truncated: Vec::with_capacity(n),
            infos: Vec::with_capacity(n),
        };
        for s in steps {
            out.observations.push(s.observation);
            out.rewards.push(s.reward);
            out.terminated.push(s.terminated);
            out.truncated.push(s.truncated);
            out.infos.push(s.info);
        }
        Ok(out)
    }

    /// Step with a row-major `N × 4` action matrix.
    pub fn step_flat(&mut self, actions: &[f64]) -> Result<VectorStep> {
        if actions.len() != self.tasks.len() * ACTION_LEN {
            return Err(Error::Parameter(format!(
                "action matrix has {} entries, expected {}×{ACTION_LEN}",
                actions.len(),
                self.tasks.len()
            )));
        }
        let rows: Vec<Action> = actions
            .chunks_exact(ACTION_LEN)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        self.step_all(&rows)
    }
}

fn send(worker: &Worker, command: Command) -> Result<()> {
    worker
        .commands
        .as_ref()
        .ok_or_else(worker_gone)?
        .send(command)
        .map_err(|_| worker_gone())
}

fn worker_gone() -> Error {
    Error::Protocol("vector worker terminated unexpectedly".into())
}

fn spawn_workers(slots: Vec<Slot>, workers: usize) -> Result<Vec<Worker>> {
    let n = slots.len();
    let workers = workers.min(n);
    let mut slots = slots.into_iter();
    let mut out = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let len = n / workers + usize::from(w < n % workers);
        let chunk: Vec<Slot> = slots.by_ref().take(len).collect();
        let (command_tx, command_rx) = bounded(1);
        let (reply_tx, reply_rx) = bounded(1);
        let first = start;
        let handle = std::thread::Builder::new()
            .name(format!("vector-worker-{w}"))
            .spawn(move || worker_loop(chunk, first, command_rx, reply_tx))
            .map_err(|e| Error::io("spawning vector worker", e))?;
        out.push(Worker {
            range: start..start + len,
            commands: Some(command_tx),
            replies: reply_rx,
            handle: Some(handle),
        });
        start += len;
    }
    Ok(out)
}

impl Drop for VectorEnv {
    fn drop(&mut self) {
        if let Backend::Async(workers) = &mut self.backend {
            for w in workers.iter_mut() {
                w.commands.take();
            }
            for w in workers.iter_mut() {
                if let Some(h) = w.handle.take() {
                    let _ = h.join();
                }
            }
        }
    }
}
