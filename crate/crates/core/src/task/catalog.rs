use std::sync::OnceLock;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::TaskId;
use crate::error::{Error, Result};

const BUILTIN: &str = include_str!("../../catalog/tasks.v1.json");
pub const CATALOG_VERSION: u32 = 1;

fn default_threshold() -> f64 {
    0.05
}

/// Shared simulator constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub workspace_low: Vector3<f64>,
    pub workspace_high: Vector3<f64>,
    pub hand_init: Vector3<f64>,
    pub grasp_radius: f64,
    pub close_threshold: f64,
    pub contact_radius: f64,
    pub contact_depth: f64,
    pub puck_radius: f64,
    pub rest_height: f64,
    pub substeps: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drive {
    /// The hand pushes the handle face forward along the joint.
    Push,
    /// A grasped handle follows the hand's projection onto the joint.
    Grasp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectSpec {
    /// Free rigid object resting on the table.
    Free {
        low: Vector3<f64>,
        high: Vector3<f64>,
        #[serde(default = "identity_quat")]
        orientation: [f64; 4],
    },
    /// Handle on a one-dimensional slide; `low`/`high` bound the handle at
    /// joint position zero.
    Prismatic {
        low: Vector3<f64>,
        high: Vector3<f64>,
        axis: Vector3<f64>,
        travel: f64,
        goal_position: f64,
        drive: Drive,
    },
    /// Handle on a vertical hinge located at `handle + hinge_offset` when
    /// closed.
    Revolute {
        low: Vector3<f64>,
        high: Vector3<f64>,
        hinge_offset: Vector3<f64>,
        max_angle: f64,
        goal_angle: f64,
        drive: Drive,
    },
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl ObjectSpec {
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            ObjectSpec::Free { low, high, .. }
            | ObjectSpec::Prismatic { low, high, .. }
            | ObjectSpec::Revolute { low, high, .. } => (*low, *high),
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, ObjectSpec::Free { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalBox {
    pub low: Vector3<f64>,
    pub high: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Hand,
    Object,
}

fn default_target() -> Target {
    Target::Object
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondObject {
    pub offset_from_goal: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleFrame {
    World,
    Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
}

/// Axis-aligned box the hand cannot enter, optionally with an open channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub frame: ObstacleFrame,
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    #[serde(default)]
    pub channel: Option<BoxSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTemplate {
    Reach,
    Push,
    Grasp,
}

/// Parameters of a task's shaped reward tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub template: RewardTemplate,
    #[serde(default)]
    pub approach_tolerance: f64,
    #[serde(default)]
    pub approach_margin: f64,
    pub place_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V1Stage {
    Hover,
    Descend,
    Grasp,
    Lift,
    Transport,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicySpec {
    Reach,
    PushObject,
    PushJoint,
    GraspJoint,
    PickPlace { carry_height: f64 },
    PegInsert { entry_offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub object: ObjectSpec,
    /// Goal sampling box; articulated tasks derive the goal from the joint.
    #[serde(default)]
    pub goal: Option<GoalBox>,
    #[serde(default = "default_target")]
    pub target: Target,
    #[serde(default)]
    pub second_object: Option<SecondObject>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default = "default_threshold")]
    pub success_threshold: f64,
    pub reward: RewardSpec,
    pub v1_stages: Vec<V1Stage>,
    #[serde(default)]
    pub v1_lift_height: f64,
    pub policy: PolicySpec,
}

impl TaskSpec {
    pub fn has_stage(&self, stage: V1Stage) -> bool {
        self.v1_stages.contains(&stage)
    }

    pub fn object_count(&self) -> usize {
        1 + usize::from(self.second_object.is_some())
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.object.bounds();
        let ordered = |lo: &Vector3<f64>, hi: &Vector3<f64>| lo.iter().zip(hi.iter()).all(|(a, b)| a <= b);
        if !ordered(&lo, &hi) {
            return Err(Error::Validation(format!("{}: object box is inverted", self.name)));
        }
        match (&self.object, &self.goal) {
            (ObjectSpec::Free { .. }, None) => {
                return Err(Error::Validation(format!("{}: free object task needs a goal box", self.name)))
            }
            (ObjectSpec::Free { .. }, Some(g)) if !ordered(&g.low, &g.high) => {
                return Err(Error::Validation(format!("{}: goal box is inverted", self.name)))
            }
            (ObjectSpec::Prismatic { axis, travel, goal_position, .. }, _)
                if (axis.norm() - 1.0).abs() > 1e-9 || *travel <= 0.0 || *goal_position > *travel =>
            {
                return Err(Error::Validation(format!("{}: bad prismatic joint", self.name)));
            }
            (ObjectSpec::Revolute { max_angle, goal_angle, .. }, _)
                if *max_angle <= 0.0 || *goal_angle > *max_angle =>
            {
                return Err(Error::Validation(format!("{}: bad revolute joint", self.name)));
            }
            _ => {}
        }
        if self.success_threshold <= 0.0 {
            return Err(Error::Validation(format!("{}: threshold must be positive", self.name)));
        }
        if self.reward.template != RewardTemplate::Reach
            && (self.reward.approach_tolerance <= 0.0 || self.reward.approach_margin <= 0.0)
        {
            return Err(Error::Validation(format!("{}: missing approach parameters", self.name)));
        }
        Ok(())
    }
}

/// The versioned task catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub version: u32,
    pub physics: Physics,
    pub tasks: Vec<TaskSpec>,
}

impl Catalog {
    pub fn builtin() -> &'static Catalog {
        static CATALOG: OnceLock<Catalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            Catalog::from_json(BUILTIN).expect("bundled task catalog is valid")
        })
    }

    pub fn builtin_json() -> &'static str {
        BUILTIN
    }

    pub fn from_json(text: &str) -> Result<Catalog> {
        let catalog: Catalog =
            serde_json::from_str(text).map_err(|e| Error::format("task catalog", e))?;
        if catalog.version != CATALOG_VERSION {
            return Err(Error::Validation(format!(
                "unsupported catalog version {}",
                catalog.version
            )));
        }
        if catalog.tasks.len() != TaskId::ALL.len() {
            return Err(Error::Validation(format!(
                "catalog lists {} tasks, expected {}",
                catalog.tasks.len(),
                TaskId::ALL.len()
            )));
        }
        for (spec, id) in catalog.tasks.iter().zip(TaskId::ALL) {
            if spec.name != id.name() {
                return Err(Error::Validation(format!(
                    "catalog entry '{}' out of order, expected '{}'",
                    spec.name,
                    id.name()
                )));
            }
            spec.validate()?;
        }
        Ok(catalog)
    }

    pub fn task(&self, id: TaskId) -> &TaskSpec {
        &self.tasks[id.index()]
    }
}
