use std::io::Write;

use serde::Serialize;

use super::catalog::{Catalog, Physics};
use super::physics::{advance, initial_state, sample_variation, Variation};
use super::reward::{compute_reward_v1, compute_reward_v2, v2_tree, Measure, RewardTree};
use super::state::{assemble_observation, Frame, Observation, SimState, V1Memory};
use super::{check_success, target_distance, Action, EnvConfig, RewardVersion, TaskId, ACTION_LEN};
use crate::error::{Error, Result};

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepInfo {
    pub success: bool,
    /// Reward before the final ×10 rescale (V2) or the raw staged reward (V1).
    pub unscaled_reward: f64,
    /// Fuzzy values of the top-level V2 terms; empty under V1.
    pub components: Vec<f64>,
    pub target_distance: f64,
    pub grasp_latched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub step: u32,
    pub state: SimState,
    pub action: Action,
    pub reward: f64,
    pub success: bool,
}

/// A single task environment.
///
/// Owned by one thread at a time; instances share nothing mutable.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    task: TaskId,
    config: EnvConfig,
    physics: &'static Physics,
    tree: RewardTree,
    threshold: f64,
    seed: u64,
    variation: Option<Variation>,
    state: SimState,
    previous: Frame,
    memory: V1Memory,
    needs_reset: bool,
}

impl TaskEnv {
    pub fn new(task: TaskId, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let physics = &Catalog::builtin().physics;
        let tree = v2_tree(task, physics);
        tree.validate()?;
        let threshold = config.threshold_for(task);
        let seed = config.seed;
        let variation = sample_variation(task, 0, seed);
        let state = initial_state(task, &variation, physics);
        Ok(TaskEnv {
            task,
            previous: state.frame(),
            config,
            physics,
            tree,
            threshold,
            seed,
            variation: None,
            state,
            memory: V1Memory::default(),
            needs_reset: true,
        })
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Reseed the variation stream; takes effect at the next reset.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn memory(&self) -> V1Memory {
        self.memory
    }

    pub fn variation(&self) -> Option<&Variation> {
        self.variation.as_ref()
    }

    pub fn success_threshold(&self) -> f64 {
        self.threshold
    }

    pub fn reward_tree(&self) -> &RewardTree {
        &self.tree
    }

    /// Start an episode on variation `index`.
    pub fn reset(&mut self, index: u32) -> Result<Observation> {
        if index >= self.config.variations_per_task {
            return Err(Error::Parameter(format!(
                "variation {index} out of range 0..{}",
                self.config.variations_per_task
            )));
        }
        let variation = sample_variation(self.task, index, self.seed);
        self.state = initial_state(self.task, &variation, self.physics);
        self.previous = self.state.frame();
        self.variation = Some(variation);
        self.memory = V1Memory::default();
        self.needs_reset = false;
        Ok(self.observation())
    }

    /// Restore an arbitrary valid state as the start of a fresh episode.
    pub fn reset_to_state(&mut self, state: SimState) -> Result<Observation> {
        validate_state(&state, self.physics, self.config.horizon)?;
        self.previous = state.frame();
        self.state = state;
        self.memory = V1Memory::default();
        self.needs_reset = false;
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        assemble_observation(
            &self.state.frame(),
            &self.previous,
            &self.state.goal,
            self.config.mode,
        )
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.needs_reset {
            return Err(Error::Protocol(
                "step called before reset or after truncation".into(),
            ));
        }
        if action.len() != ACTION_LEN {
            return Err(Error::Parameter(format!(
                "action has {} components, expected {ACTION_LEN}",
                action.len()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Parameter("action contains a non-finite value".into()));
        }
        let mut clamped = [0.0; ACTION_LEN];
        for (c, a) in clamped.iter_mut().zip(action) {
            *c = a.clamp(-1.0, 1.0);
        }

        self.previous = self.state.frame();
        advance(
            &mut self.state,
            &clamped,
            self.task,
            self.physics,
            self.config.action_scale,
        );
        self.state.step += 1;

        let (reward, info) = self.evaluate();
        let truncated = self.state.step >= self.config.horizon;
        self.needs_reset = truncated;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminated: false,
            truncated,
            info,
        })
    }

    fn evaluate(&mut self) -> (f64, StepInfo) {
        let success = check_success(&self.state, self.task, self.threshold);
        let distance = target_distance(&self.state, self.task);
        match self.config.reward_version {
            RewardVersion::V2 => {
                let reward = compute_reward_v2(&self.state, self.task, &self.tree, self.threshold);
                let state = &self.state;
                let read = |m: &Measure| m.read(state);
                let components = self
                    .tree
                    .component_values(&read, success)
                    .expect("task trees are validated at construction")
                    .into_iter()
                    .map(|v| v.get())
                    .collect();
                let info = StepInfo {
                    success,
                    unscaled_reward: reward / crate::fuzzy::REWARD_SCALE,
                    components,
                    target_distance: distance,
                    grasp_latched: self.memory.grasp_latched,
                };
                (reward, info)
            }
            RewardVersion::V1 => {
                let (reward, memory) =
                    compute_reward_v1(&self.state, self.memory, self.task, self.physics);
                self.memory = memory;
                let info = StepInfo {
                    success,
                    unscaled_reward: reward,
                    components: Vec::new(),
                    target_distance: distance,
                    grasp_latched: memory.grasp_latched,
                };
                (reward, info)
            }
        }
    }

    /// Roll `policy` from variation `index` for a full episode, writing one
    /// JSON line per step.
    pub fn dump_trajectory<W, P>(&mut self, index: u32, mut policy: P, out: &mut W) -> Result<()>
    where
        W: Write,
        P: FnMut(&SimState, &Observation) -> Action,
    {
        let mut obs = self.reset(index)?;
        loop {
            let action = policy(&self.state, &obs);
            let result = self.step(&action)?;
            let record = TrajectoryRecord {
                step: self.state.step,
                state: self.state.clone(),
                action,
                reward: result.reward,
                success: result.info.success,
            };
            serde_json::to_writer(&mut *out, &record)
                .map_err(|e| Error::format("trajectory record", e))?;
            out.write_all(b"\n")
                .map_err(|e| Error::io("writing trajectory", e))?;
            obs = result.observation;
            if result.truncated {
                return Ok(());
            }
        }
    }
}

fn validate_state(state: &SimState, physics: &Physics, horizon: u32) -> Result<()> {
    let inside = (0..3).all(|i| {
        let p = state.ee[i];
        p >= physics.workspace_low[i] - 1e-9 && p <= physics.workspace_high[i] + 1e-9
    });
    if !inside {
        return Err(Error::Validation("hand outside the workspace".into()));
    }
    if !(0.0..=1.0).contains(&state.gripper_openness) {
        return Err(Error::Validation("gripper openness outside [0, 1]".into()));
    }
    let unit = |q: &[f64; 4]| (q.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-9;
    if !unit(&state.obj1_quat) {
        return Err(Error::Validation("object quaternion is not unit norm".into()));
    }
    if state.obj2_quat != [0.0; 4] && !unit(&state.obj2_quat) {
        return Err(Error::Validation("second quaternion is not unit norm".into()));
    }
    if state.step > horizon {
        return Err(Error::Validation("step counter beyond the horizon".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::scripted::scripted_policy;
    use crate::task::Mode;

    fn env(task: TaskId, version: RewardVersion) -> TaskEnv {
        TaskEnv::new(
            task,
            EnvConfig {
                reward_version: version,
                ..EnvConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn step_requires_reset() {
        let mut e = env(TaskId::Reach, RewardVersion::V2);
        assert!(matches!(e.step(&[0.0; 4]), Err(Error::Protocol(_))));
        e.reset(0).unwrap();
        assert!(e.step(&[0.0; 4]).is_ok());
    }

    #[test]
    fn out_of_range_variation_is_rejected() {
        let mut e = env(TaskId::Reach, RewardVersion::V2);
        assert!(matches!(e.reset(50), Err(Error::Parameter(_))));
    }

    #[test]
    fn bad_actions_are_rejected() {
        let mut e = env(TaskId::Reach, RewardVersion::V2);
        e.reset(0).unwrap();
        assert!(e.step(&[0.0; 3]).is_err());
        assert!(e.step(&[f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn truncates_at_horizon_and_then_refuses() {
        let mut e = TaskEnv::new(
            TaskId::Reach,
            EnvConfig {
                horizon: 3,
                ..EnvConfig::default()
            },
        )
        .unwrap();
        e.reset(0).unwrap();
        assert!(!e.step(&[0.0; 4]).unwrap().truncated);
        assert!(!e.step(&[0.0; 4]).unwrap().truncated);
        let last = e.step(&[0.0; 4]).unwrap();
        assert!(last.truncated && !last.terminated);
        assert!(matches!(e.step(&[0.0; 4]), Err(Error::Protocol(_))));
    }

    #[test]
    fn meta_mode_zeroes_goal() {
        let mut e = TaskEnv::new(
            TaskId::Reach,
            EnvConfig {
                mode: Mode::Meta,
                ..EnvConfig::default()
            },
        )
        .unwrap();
        let obs = e.reset(4).unwrap();
        assert_eq!(obs.goal(), &[0.0; 3]);
        assert_eq!(&obs.0[11..18], &[0.0; 7]);
    }

    #[test]
    fn oversized_actions_are_clamped() {
        let mut a = env(TaskId::Reach, RewardVersion::V2);
        let mut b = env(TaskId::Reach, RewardVersion::V2);
        a.reset(1).unwrap();
        b.reset(1).unwrap();
        let ra = a.step(&[5.0, -3.0, 2.0, 0.0]).unwrap();
        let rb = b.step(&[1.0, -1.0, 1.0, 0.0]).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn dump_writes_one_line_per_step() {
        let mut e = TaskEnv::new(
            TaskId::Push,
            EnvConfig {
                horizon: 20,
                ..EnvConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        e.dump_trajectory(0, |s, _| scripted_policy(TaskId::Push, s), &mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 20);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["step"], 1);
        assert!(first["state"]["ee"].is_array());
    }
}
