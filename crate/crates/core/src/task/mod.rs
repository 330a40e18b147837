//! Quasi-static manipulation simulator and its 12-task catalog.
//!
//! The end-effector is displacement controlled, objects have no inertia, and
//! grasping is decided by proximity plus gripper closure. Every task shares
//! the 39-dimensional goal-conditioned observation layout and the 4-dimensional
//! action space, and exposes both reward versions.

mod catalog;
mod env;
mod physics;
pub mod reward;
pub mod scripted;
mod state;

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catalog::{
    Catalog, Drive, GoalBox, ObjectSpec, ObstacleFrame, ObstacleSpec, Physics, PolicySpec,
    RewardSpec, RewardTemplate, Target, TaskSpec, V1Stage,
};
pub use env::{StepInfo, StepResult, TaskEnv, TrajectoryRecord};
pub use physics::{sample_variation, Variation};
pub use state::{
    assemble_observation, Frame, Observation, SimState, V1Memory, FRAME_LEN, OBS_LEN,
};

/// Action dimensionality: XYZ displacement plus gripper effort.
pub const ACTION_LEN: usize = 4;

pub type Action = [f64; ACTION_LEN];

/// The twelve catalog tasks, in catalog order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    Reach,
    Push,
    PickPlace,
    DoorOpen,
    DrawerOpen,
    DrawerClose,
    ButtonPress,
    PegInsertSide,
    WindowOpen,
    WindowClose,
    CoffeePush,
    PickPlaceWall,
}

impl TaskId {
    pub const ALL: [TaskId; 12] = [
        TaskId::Reach,
        TaskId::Push,
        TaskId::PickPlace,
        TaskId::DoorOpen,
        TaskId::DrawerOpen,
        TaskId::DrawerClose,
        TaskId::ButtonPress,
        TaskId::PegInsertSide,
        TaskId::WindowOpen,
        TaskId::WindowClose,
        TaskId::CoffeePush,
        TaskId::PickPlaceWall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Reach => "reach",
            TaskId::Push => "push",
            TaskId::PickPlace => "pick-place",
            TaskId::DoorOpen => "door-open",
            TaskId::DrawerOpen => "drawer-open",
            TaskId::DrawerClose => "drawer-close",
            TaskId::ButtonPress => "button-press",
            TaskId::PegInsertSide => "peg-insert-side",
            TaskId::WindowOpen => "window-open",
            TaskId::WindowClose => "window-close",
            TaskId::CoffeePush => "coffee-push",
            TaskId::PickPlaceWall => "pick-place-wall",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn spec(self) -> &'static TaskSpec {
        Catalog::builtin().task(self)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    /// Accepts catalog names, optionally with a `-vN` version suffix
    /// (`reach-v3`).
    fn from_str(s: &str) -> Result<Self> {
        let base = match s.rsplit_once("-v") {
            Some((head, tail)) if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) => {
                head
            }
            _ => s,
        };
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == base)
            .ok_or_else(|| Error::Lookup(format!("unknown task '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVersion {
    V1,
    V2,
}

impl FromStr for RewardVersion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(RewardVersion::V1),
            "v2" => Ok(RewardVersion::V2),
            _ => Err(Error::Validation(format!("unknown reward version '{s}'"))),
        }
    }
}

impl fmt::Display for RewardVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardVersion::V1 => "v1",
            RewardVersion::V2 => "v2",
        })
    }
}

/// Multi-task mode shows the goal to the agent; meta mode zeroes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Multitask,
    Meta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub reward_version: RewardVersion,
    pub mode: Mode,
    pub horizon: u32,
    /// Meters of end-effector travel per unit action.
    pub action_scale: f64,
    /// Overrides every task's catalog threshold when set.
    pub success_threshold: Option<f64>,
    pub variations_per_task: u32,
    /// Discount factor; consumed by learners only.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            reward_version: RewardVersion::V2,
            mode: Mode::Multitask,
            horizon: 500,
            action_scale: 0.01,
            success_threshold: None,
            variations_per_task: 50,
            gamma: 0.99,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Parameter("horizon must be at least 1".into()));
        }
        if self.variations_per_task < 1 {
            return Err(Error::Parameter(
                "variations_per_task must be at least 1".into(),
            ));
        }
        if !(self.action_scale.is_finite() && self.action_scale > 0.0) {
            return Err(Error::Parameter("action_scale must be positive".into()));
        }
        if let Some(t) = self.success_threshold {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Parameter("success_threshold must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Parameter("gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn threshold_for(&self, task: TaskId) -> f64 {
        self.success_threshold
            .unwrap_or_else(|| task.spec().success_threshold)
    }
}

/// True iff the task's target quantity is strictly within its threshold.
pub fn check_success(state: &SimState, task: TaskId, threshold: f64) -> bool {
    target_distance(state, task) < threshold
}

/// Rebuild the simulator state behind an observation's current frame.
///
/// The goal comes from the caller since meta mode hides it. The grasp flag
/// is recomputed from geometry and gripper closure, which is exactly how the
/// simulator sets it; the step counter is not observable and is left at 0.
pub fn state_from_observation(task: TaskId, obs: &Observation, goal: Vector3<f64>) -> SimState {
    let f = obs.current();
    let v = |i: usize| Vector3::new(f[i], f[i + 1], f[i + 2]);
    let q = |i: usize| [f[i], f[i + 1], f[i + 2], f[i + 3]];
    let mut state = SimState {
        ee: v(0),
        gripper_openness: f[3],
        obj1_pos: v(4),
        obj1_quat: q(7),
        obj2_pos: v(11),
        obj2_quat: q(14),
        attached: false,
        goal,
        step: 0,
    };
    state.attached = physics::holds(task.spec(), &state, &Catalog::builtin().physics);
    state
}

/// Distance between the task's tracked point (hand or object) and the goal.
pub fn target_distance(state: &SimState, task: TaskId) -> f64 {
    match task.spec().target {
        Target::Hand => (state.ee - state.goal).norm(),
        Target::Object => (state.obj1_pos - state.goal).norm(),
    }
}
