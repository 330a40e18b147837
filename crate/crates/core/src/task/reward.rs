//! Reward functions.
//!
//! V2 rewards are Markovian fuzzy constraint trees (see [`crate::fuzzy`])
//! with range `(0, 10]`. V1 rewards are staged: negative distance shaping
//! until the grasp (or contact) stage completes, a latched memory flag, and a
//! large proximity bonus near the goal peaking at [`V1_PEAK`].

use serde::{Deserialize, Serialize};

use super::catalog::{Physics, RewardTemplate, TaskSpec, V1Stage};
use super::physics::holds;
use super::state::{SimState, V1Memory};
use super::{target_distance, TaskId};
use crate::fuzzy::{scale_reward, Constraint, ToleranceSpec};

/// Peak per-step V1 reward at zero distance to the goal.
pub const V1_PEAK: f64 = 1200.0;
const V1_WIDE: f64 = 0.01;
const V1_NARROW: f64 = 0.001;
const V1_HOVER_HEIGHT: f64 = 0.08;
const V1_HOVER_XY: f64 = 0.02;
const V1_LIFT_GAIN: f64 = 100.0;
const V1_GRIP_GAIN: f64 = 0.1;

/// Geometric quantities a V2 constraint can read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    HandToGoal,
    HandToObject,
    ObjectToGoal,
    GripperOpenness,
}

impl Measure {
    pub fn read(self, state: &SimState) -> f64 {
        match self {
            Measure::HandToGoal => (state.ee - state.goal).norm(),
            Measure::HandToObject => (state.ee - state.obj1_pos).norm(),
            Measure::ObjectToGoal => (state.obj1_pos - state.goal).norm(),
            Measure::GripperOpenness => state.gripper_openness,
        }
    }
}

pub type RewardTree = Constraint<Measure>;

fn spec(lower: f64, upper: f64, margin: f64) -> ToleranceSpec {
    ToleranceSpec::new(lower, upper, margin).expect("catalog margins are positive")
}

/// Build the V2 constraint tree of a task from its catalog entry.
pub fn v2_tree(task: TaskId, physics: &Physics) -> RewardTree {
    let task_spec = task.spec();
    let r = &task_spec.reward;
    let threshold = task_spec.success_threshold;
    let place = || {
        Constraint::tolerance(
            Measure::ObjectToGoal,
            spec(0.0, threshold, r.place_margin),
        )
    };
    let approach = || {
        Constraint::released(
            Measure::HandToObject,
            spec(0.0, r.approach_tolerance, r.approach_margin),
        )
    };
    match r.template {
        RewardTemplate::Reach => {
            Constraint::tolerance(Measure::HandToGoal, spec(0.0, threshold, r.place_margin))
        }
        RewardTemplate::Push => Constraint::or(vec![
            (0.3, approach()),
            (0.7, Constraint::and(vec![approach(), place()])),
        ]),
        RewardTemplate::Grasp => {
            let grasp = || {
                Constraint::and(vec![
                    approach(),
                    Constraint::released(
                        Measure::GripperOpenness,
                        spec(0.0, physics.close_threshold, 0.5),
                    ),
                ])
            };
            Constraint::or(vec![
                (0.2, approach()),
                (0.3, grasp()),
                (0.5, Constraint::and(vec![grasp(), place()])),
            ])
        }
    }
}

/// Shaped reward of `state`; depends on nothing but the state.
pub fn compute_reward_v2(state: &SimState, task: TaskId, tree: &RewardTree, threshold: f64) -> f64 {
    let solved = target_distance(state, task) < threshold;
    let value = tree
        .evaluate(&|m: &Measure| m.read(state), solved)
        .expect("task trees are validated at construction");
    scale_reward(value)
}

fn proximity_bonus(d: f64) -> f64 {
    let d2 = d * d;
    0.5 * V1_PEAK * ((-d2 / V1_WIDE).exp() + (-d2 / V1_NARROW).exp())
}

/// Whether the latching stage (grasp, or contact for push tasks) holds now.
fn latch_trigger(spec: &TaskSpec, state: &SimState, physics: &Physics) -> bool {
    if spec.has_stage(V1Stage::Grasp) {
        holds(spec, state, physics)
    } else if spec.has_stage(V1Stage::Descend) {
        (state.ee - state.obj1_pos).norm() <= spec.reward.approach_tolerance
    } else {
        false
    }
}

/// Staged reward with its latched memory; returns the updated memory.
pub fn compute_reward_v1(
    state: &SimState,
    memory: V1Memory,
    task: TaskId,
    physics: &Physics,
) -> (f64, V1Memory) {
    let spec = task.spec();
    let memory = V1Memory {
        grasp_latched: memory.grasp_latched || latch_trigger(spec, state, physics),
    };
    let hand_to_obj = (state.ee - state.obj1_pos).norm();
    let to_goal = target_distance(state, task);

    let staged = spec.has_stage(V1Stage::Descend);
    if !staged {
        // Reach: only the final move-to-goal stage remains.
        return (-to_goal + proximity_bonus(to_goal), memory);
    }

    if !memory.grasp_latched {
        let horizontal = (state.ee.xy() - state.obj1_pos.xy()).norm();
        let reward = if spec.has_stage(V1Stage::Hover) && horizontal > V1_HOVER_XY {
            let mut above = state.obj1_pos;
            above.z += V1_HOVER_HEIGHT;
            -(state.ee - above).norm() - V1_GRIP_GAIN * (1.0 - state.gripper_openness)
        } else if spec.has_stage(V1Stage::Grasp) && hand_to_obj <= physics.grasp_radius {
            -hand_to_obj + V1_GRIP_GAIN * (1.0 - state.gripper_openness)
        } else {
            -hand_to_obj
        };
        return (reward, memory);
    }

    let grasping = spec.has_stage(V1Stage::Grasp);
    let mut reward = -hand_to_obj;
    if grasping {
        reward -= V1_GRIP_GAIN * state.gripper_openness;
    }
    let carrying = !grasping || state.attached;
    if carrying {
        let mut transport = true;
        if spec.has_stage(V1Stage::Lift) {
            let lift = (state.obj1_pos.z - physics.rest_height).max(0.0);
            reward += V1_LIFT_GAIN * lift.min(spec.v1_lift_height);
            let near_goal = (state.obj1_pos.xy() - state.goal.xy()).norm() <= V1_HOVER_XY;
            transport = lift >= spec.v1_lift_height - 0.005 || near_goal;
        }
        if transport {
            reward += proximity_bonus(to_goal);
        }
    }
    (reward, memory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::catalog::Catalog;
    use crate::task::physics::{initial_state, sample_variation};
    use nalgebra::Vector3;

    fn physics() -> &'static Physics {
        &Catalog::builtin().physics
    }

    fn start(task: TaskId) -> SimState {
        initial_state(task, &sample_variation(task, 0, 0), physics())
    }

    #[test]
    fn every_tree_validates() {
        for task in TaskId::ALL {
            v2_tree(task, physics()).validate().unwrap();
        }
    }

    #[test]
    fn solved_states_score_ten() {
        for task in TaskId::ALL {
            let mut s = start(task);
            let tree = v2_tree(task, physics());
            match task.spec().target {
                crate::task::Target::Hand => s.ee = s.goal,
                crate::task::Target::Object => s.obj1_pos = s.goal,
            }
            let thr = task.spec().success_threshold;
            assert_eq!(compute_reward_v2(&s, task, &tree, thr), 10.0, "{task}");
        }
    }

    #[test]
    fn reach_one_margin_past_bound_scores_one() {
        let task = TaskId::Reach;
        let mut s = start(task);
        let thr = task.spec().success_threshold;
        let margin = task.spec().reward.place_margin;
        s.ee = s.goal + Vector3::new(0.0, 0.0, thr + margin);
        let r = compute_reward_v2(&s, task, &v2_tree(task, physics()), thr);
        assert!((r - 1.0).abs() < 1e-12, "r = {r}");
    }

    #[test]
    fn v1_starts_negative_on_pick_place() {
        let s = start(TaskId::PickPlace);
        let (r, m) = compute_reward_v1(&s, V1Memory::default(), TaskId::PickPlace, physics());
        assert!(r < 0.0);
        assert!(!m.grasp_latched);
    }

    #[test]
    fn v1_peak_at_goal_while_held() {
        let task = TaskId::PickPlace;
        let mut s = start(task);
        s.obj1_pos = s.goal;
        s.ee = s.goal;
        s.gripper_openness = 0.0;
        s.attached = true;
        let (r, m) = compute_reward_v1(&s, V1Memory::default(), task, physics());
        assert!(m.grasp_latched);
        assert!((r - V1_PEAK).abs() < 0.02 * V1_PEAK, "r = {r}");
    }

    #[test]
    fn v1_is_pure_and_latch_is_sticky() {
        let task = TaskId::Push;
        let mut s = start(task);
        s.ee = s.obj1_pos;
        let (r1, m1) = compute_reward_v1(&s, V1Memory::default(), task, physics());
        let (r2, m2) = compute_reward_v1(&s, V1Memory::default(), task, physics());
        assert_eq!(r1.to_bits(), r2.to_bits());
        assert_eq!(m1, m2);
        assert!(m1.grasp_latched);
        s.ee.y -= 0.3;
        let (_, m3) = compute_reward_v1(&s, m1, task, physics());
        assert!(m3.grasp_latched);
    }

    #[test]
    fn tree_dump_is_json() {
        let tree = v2_tree(TaskId::PickPlace, physics());
        let text = serde_json::to_string(&tree).unwrap();
        assert!(text.contains("\"kind\":\"weighted_sum\""));
        assert!(text.contains("\"measure\":\"object_to_goal\""));
    }
}
