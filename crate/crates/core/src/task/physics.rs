//! Quasi-static kinematics: displacement-controlled hand, proximity grasping,
//! lateral pushing of free objects, and single-degree-of-freedom joints.

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{Drive, ObjectSpec, ObstacleFrame, Physics, TaskSpec};
use super::state::SimState;
use super::{Action, TaskId};
use crate::rng;

/// Initial object placement and goal of one parametric variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    pub index: u32,
    pub object: Vector3<f64>,
    pub goal: Vector3<f64>,
}

fn sample_box<R: Rng>(rng: &mut R, low: &Vector3<f64>, high: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let u: f64 = rng.random();
        low[i] + (high[i] - low[i]) * u
    })
}

/// Draw variation `index` of `task` from the stream keyed by `seed`.
pub fn sample_variation(task: TaskId, index: u32, seed: u64) -> Variation {
    let spec = task.spec();
    let mut rng = rng::stream(seed, &[task.index() as u64, u64::from(index)]);
    let (lo, hi) = spec.object.bounds();
    let object = sample_box(&mut rng, &lo, &hi);
    let goal = match (&spec.object, &spec.goal) {
        (ObjectSpec::Free { .. }, Some(g)) => sample_box(&mut rng, &g.low, &g.high),
        (ObjectSpec::Prismatic { axis, goal_position, .. }, _) => object + axis * *goal_position,
        (ObjectSpec::Revolute { hinge_offset, goal_angle, .. }, _) => {
            let hinge = object + hinge_offset;
            hinge + rotate_z(*goal_angle) * (-hinge_offset)
        }
        (ObjectSpec::Free { .. }, None) => unreachable!("validated by the catalog"),
    };
    Variation {
        index,
        object,
        goal,
    }
}

fn rotate_z(angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle)
}

fn yaw_quat(angle: f64) -> [f64; 4] {
    let h = 0.5 * angle;
    [h.cos(), 0.0, 0.0, h.sin()]
}

pub fn initial_state(task: TaskId, variation: &Variation, physics: &Physics) -> SimState {
    let spec = task.spec();
    let obj1_quat = match &spec.object {
        ObjectSpec::Free { orientation, .. } => *orientation,
        ObjectSpec::Prismatic { .. } => [1.0, 0.0, 0.0, 0.0],
        ObjectSpec::Revolute { .. } => yaw_quat(0.0),
    };
    let (obj2_pos, obj2_quat) = match &spec.second_object {
        Some(second) => (variation.goal + second.offset_from_goal, [1.0, 0.0, 0.0, 0.0]),
        None => (Vector3::zeros(), [0.0; 4]),
    };
    SimState {
        ee: physics.hand_init,
        gripper_openness: 1.0,
        obj1_pos: variation.object,
        obj1_quat,
        obj2_pos,
        obj2_quat,
        attached: false,
        goal: variation.goal,
        step: 0,
    }
}

/// Joint coordinate recovered from the handle position and the goal.
pub fn joint_position(spec: &TaskSpec, state: &SimState) -> Option<f64> {
    match &spec.object {
        ObjectSpec::Free { .. } => None,
        ObjectSpec::Prismatic {
            axis,
            goal_position,
            ..
        } => {
            let origin = state.goal - axis * *goal_position;
            Some((state.obj1_pos - origin).dot(axis))
        }
        ObjectSpec::Revolute {
            hinge_offset,
            goal_angle,
            ..
        } => {
            let hinge = revolute_hinge(state.goal, hinge_offset, *goal_angle);
            Some(signed_yaw(&(-hinge_offset), &(state.obj1_pos - hinge)))
        }
    }
}

/// Handle position for a joint coordinate, given the goal that pins the frame.
pub fn handle_at(spec: &TaskSpec, goal: &Vector3<f64>, q: f64) -> Option<Vector3<f64>> {
    match &spec.object {
        ObjectSpec::Free { .. } => None,
        ObjectSpec::Prismatic {
            axis,
            goal_position,
            ..
        } => Some(goal - axis * *goal_position + axis * q),
        ObjectSpec::Revolute {
            hinge_offset,
            goal_angle,
            ..
        } => {
            let hinge = revolute_hinge(*goal, hinge_offset, *goal_angle);
            Some(hinge + rotate_z(q) * (-hinge_offset))
        }
    }
}

fn revolute_hinge(goal: Vector3<f64>, hinge_offset: &Vector3<f64>, goal_angle: f64) -> Vector3<f64> {
    goal - rotate_z(goal_angle) * (-hinge_offset)
}

fn signed_yaw(from: &Vector3<f64>, to: &Vector3<f64>) -> f64 {
    let cross = from.x * to.y - from.y * to.x;
    let dot = from.x * to.x + from.y * to.y;
    cross.atan2(dot)
}

fn clamp_workspace(p: Vector3<f64>, physics: &Physics) -> Vector3<f64> {
    Vector3::from_fn(|i, _| p[i].clamp(physics.workspace_low[i], physics.workspace_high[i]))
}

struct Aabb {
    center: Vector3<f64>,
    half: Vector3<f64>,
}

impl Aabb {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() < self.half[i])
    }
}

struct Obstacle {
    solid: Aabb,
    channel: Option<Aabb>,
}

impl Obstacle {
    fn blocks(&self, p: &Vector3<f64>) -> bool {
        self.solid.contains(p) && !self.channel.as_ref().is_some_and(|c| c.contains(p))
    }
}

fn obstacles(spec: &TaskSpec, goal: &Vector3<f64>) -> Vec<Obstacle> {
    spec.obstacles
        .iter()
        .map(|o| {
            let origin = match o.frame {
                ObstacleFrame::World => Vector3::zeros(),
                ObstacleFrame::Goal => *goal,
            };
            Obstacle {
                solid: Aabb {
                    center: origin + o.center,
                    half: o.half_extents,
                },
                channel: o.channel.as_ref().map(|c| Aabb {
                    center: origin + c.center,
                    half: c.half_extents,
                }),
            }
        })
        .collect()
}

/// Move from `old` toward `new`, dropping the blocked components of the
/// displacement. Vertical motion is tried first so the hand can climb over
/// walls.
fn resolve_obstacles(old: Vector3<f64>, new: Vector3<f64>, obstacles: &[Obstacle]) -> Vector3<f64> {
    let free = |p: &Vector3<f64>| !obstacles.iter().any(|o| o.blocks(p));
    if free(&new) {
        return new;
    }
    let vertical = Vector3::new(old.x, old.y, new.z);
    if free(&vertical) {
        return vertical;
    }
    let horizontal = Vector3::new(new.x, new.y, old.z);
    if free(&horizontal) {
        return horizontal;
    }
    old
}

/// Whether the hand is currently holding the task object.
pub fn holds(spec: &TaskSpec, state: &SimState, physics: &Physics) -> bool {
    let graspable = match &spec.object {
        ObjectSpec::Free { .. } => true,
        ObjectSpec::Prismatic { drive, .. } | ObjectSpec::Revolute { drive, .. } => {
            *drive == Drive::Grasp
        }
    };
    graspable
        && state.gripper_openness < physics.close_threshold
        && (state.ee - state.obj1_pos).norm() <= physics.grasp_radius
}

fn push_free_object(
    old: &Vector3<f64>,
    new: &Vector3<f64>,
    obj: &mut Vector3<f64>,
    physics: &Physics,
) {
    let r = physics.puck_radius;
    let half_height = physics.rest_height;
    if (new.z - obj.z).abs() >= half_height {
        return;
    }
    let rel_new = Vector3::new(obj.x - new.x, obj.y - new.y, 0.0);
    let rel_old = Vector3::new(obj.x - old.x, obj.y - old.y, 0.0);
    // Only lateral entry pushes; a hand lowered onto the object straddles it.
    if rel_new.norm() >= r || rel_old.norm() < r - 1e-9 {
        return;
    }
    let dir = if rel_new.norm() > 1e-12 {
        rel_new.normalize()
    } else {
        let motion = Vector3::new(new.x - old.x, new.y - old.y, 0.0);
        if motion.norm() <= 1e-12 {
            return;
        }
        motion.normalize()
    };
    obj.x = (new.x + r * dir.x).clamp(physics.workspace_low.x, physics.workspace_high.x);
    obj.y = (new.y + r * dir.y).clamp(physics.workspace_low.y, physics.workspace_high.y);
}

/// Advance the state by one control step. Actions must already be clamped
/// to `[-1, 1]`.
pub fn advance(state: &mut SimState, action: &Action, task: TaskId, physics: &Physics, action_scale: f64) {
    let spec = task.spec();
    let obstacles = obstacles(spec, &state.goal);
    state.gripper_openness = 0.5 * (1.0 - action[3]);
    let closed = state.gripper_openness < physics.close_threshold;
    state.attached &= closed;

    let substeps = physics.substeps.max(1);
    let delta = Vector3::new(action[0], action[1], action[2]) * (action_scale / f64::from(substeps));

    for _ in 0..substeps {
        let old = state.ee;
        let new = resolve_obstacles(old, clamp_workspace(old + delta, physics), &obstacles);
        state.ee = new;

        match &spec.object {
            ObjectSpec::Free { .. } => {
                if state.attached {
                    state.obj1_pos = new;
                } else {
                    push_free_object(&old, &new, &mut state.obj1_pos, physics);
                }
            }
            ObjectSpec::Prismatic {
                axis,
                travel,
                drive,
                ..
            } => {
                let q = joint_position(spec, state).unwrap_or(0.0);
                let origin = state.obj1_pos - axis * q;
                let s = (new - origin).dot(axis);
                let q_new = match drive {
                    Drive::Grasp if state.attached => s.clamp(0.0, *travel),
                    Drive::Push => {
                        let perp = ((new - origin) - axis * s).norm();
                        if perp <= physics.contact_radius && s > q && s <= q + physics.contact_depth {
                            s.min(*travel)
                        } else {
                            q
                        }
                    }
                    Drive::Grasp => q,
                };
                if q_new != q {
                    state.obj1_pos = origin + axis * q_new;
                }
            }
            ObjectSpec::Revolute {
                max_angle, drive, ..
            } => {
                if *drive == Drive::Grasp && state.attached {
                    let theta = joint_position(spec, state).unwrap_or(0.0);
                    let hinge_offset = match &spec.object {
                        ObjectSpec::Revolute { hinge_offset, .. } => *hinge_offset,
                        _ => unreachable!(),
                    };
                    let hinge = state.obj1_pos - rotate_z(theta) * (-hinge_offset);
                    let target = Vector3::new(new.x - hinge.x, new.y - hinge.y, 0.0);
                    let theta_new = signed_yaw(&(-hinge_offset), &target).clamp(0.0, *max_angle);
                    state.obj1_pos = hinge + rotate_z(theta_new) * (-hinge_offset);
                    state.obj1_quat = yaw_quat(theta_new);
                }
            }
        }

        state.attached = holds(spec, state, physics);
        if state.attached && spec.object.is_free() {
            state.obj1_pos = state.ee;
        }
    }

    if spec.object.is_free() && !state.attached && state.obj1_pos.z > physics.rest_height {
        state.obj1_pos.z = physics.rest_height;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::catalog::Catalog;

    fn physics() -> &'static Physics {
        &Catalog::builtin().physics
    }

    #[test]
    fn variations_are_deterministic_and_inside_boxes() {
        for task in TaskId::ALL {
            let spec = task.spec();
            let (lo, hi) = spec.object.bounds();
            for i in 0..50 {
                let a = sample_variation(task, i, 7);
                assert_eq!(a, sample_variation(task, i, 7));
                for k in 0..3 {
                    assert!(a.object[k] >= lo[k] && a.object[k] <= hi[k]);
                }
            }
            assert_ne!(sample_variation(task, 0, 7), sample_variation(task, 1, 7));
        }
    }

    #[test]
    fn joint_coordinates_round_trip() {
        for task in [TaskId::DoorOpen, TaskId::DrawerOpen, TaskId::WindowClose] {
            let spec = task.spec();
            let v = sample_variation(task, 3, 1);
            let s = initial_state(task, &v, physics());
            assert!(joint_position(spec, &s).unwrap().abs() < 1e-12);
            for q in [0.0, 0.05, 0.1] {
                let h = handle_at(spec, &v.goal, q).unwrap();
                let mut moved = s.clone();
                moved.obj1_pos = h;
                assert!((joint_position(spec, &moved).unwrap() - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_is_clamped_to_workspace() {
        let v = sample_variation(TaskId::Reach, 0, 0);
        let mut s = initial_state(TaskId::Reach, &v, physics());
        for _ in 0..200 {
            advance(&mut s, &[0.0, 0.0, -1.0, -1.0], TaskId::Reach, physics(), 0.01);
        }
        assert_eq!(s.ee.z, physics().workspace_low.z);
    }

    #[test]
    fn wall_blocks_the_hand() {
        let task = TaskId::PickPlaceWall;
        let v = sample_variation(task, 0, 0);
        let mut s = initial_state(task, &v, physics());
        s.ee = Vector3::new(0.0, 0.70, 0.05);
        for _ in 0..30 {
            advance(&mut s, &[0.0, 1.0, 0.0, -1.0], task, physics(), 0.01);
        }
        assert!(s.ee.y < 0.74 + 1e-12, "hand crossed the wall: {}", s.ee.y);
    }

    #[test]
    fn lateral_contact_pushes_puck() {
        let task = TaskId::Push;
        let v = sample_variation(task, 0, 0);
        let mut s = initial_state(task, &v, physics());
        let start = s.obj1_pos;
        s.ee = start - Vector3::new(0.0, 0.06, 0.0);
        for _ in 0..10 {
            advance(&mut s, &[0.0, 1.0, 0.0, -1.0], task, physics(), 0.01);
        }
        assert!(s.obj1_pos.y > start.y + 0.03);
        assert!((s.obj1_pos.x - start.x).abs() < 1e-9);
    }

    #[test]
    fn closing_near_object_attaches_and_release_drops() {
        let task = TaskId::PickPlace;
        let v = sample_variation(task, 0, 0);
        let mut s = initial_state(task, &v, physics());
        s.ee = s.obj1_pos + Vector3::new(0.0, 0.0, 0.01);
        advance(&mut s, &[0.0, 0.0, 0.0, 1.0], task, physics(), 0.01);
        assert!(s.attached);
        for _ in 0..10 {
            advance(&mut s, &[0.0, 0.0, 1.0, 1.0], task, physics(), 0.01);
        }
        assert!(s.obj1_pos.z > 0.1);
        advance(&mut s, &[0.0, 0.0, 0.0, -1.0], task, physics(), 0.01);
        assert!(!s.attached);
        assert_eq!(s.obj1_pos.z, physics().rest_height);
    }

    #[test]
    fn pushing_drawer_closes_it() {
        let task = TaskId::DrawerClose;
        let spec = task.spec();
        let v = sample_variation(task, 2, 0);
        let mut s = initial_state(task, &v, physics());
        s.ee = s.obj1_pos - Vector3::new(0.0, 0.01, 0.0);
        for _ in 0..30 {
            advance(&mut s, &[0.0, 1.0, 0.0, -1.0], task, physics(), 0.01);
        }
        let q = joint_position(spec, &s).unwrap();
        assert!((q - 0.15).abs() < 1e-9, "q = {q}");
    }

    #[test]
    fn grasped_door_swings_open() {
        let task = TaskId::DoorOpen;
        let spec = task.spec();
        let v = sample_variation(task, 0, 0);
        let mut s = initial_state(task, &v, physics());
        s.ee = s.obj1_pos;
        advance(&mut s, &[0.0, 0.0, 0.0, 1.0], task, physics(), 0.01);
        assert!(s.attached);
        for _ in 0..5 {
            advance(&mut s, &[0.0, -1.0, 0.0, 1.0], task, physics(), 0.01);
        }
        let theta = joint_position(spec, &s).unwrap();
        assert!(theta > 0.1, "theta = {theta}");
        let q = s.obj1_quat;
        assert!((q.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
