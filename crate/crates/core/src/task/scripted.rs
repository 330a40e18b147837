//! Hand-written expert controllers, one template per catalog policy type.
//!
//! Every controller is a pure function of the simulator state, so replaying
//! a state always yields the same action. They steer the hand with a
//! saturated proportional law toward a waypoint chosen from the current
//! geometry.

use nalgebra::Vector3;

use super::catalog::{Catalog, ObjectSpec, PolicySpec};
use super::physics::{handle_at, joint_position};
use super::state::SimState;
use super::{Action, TaskId};

const GAIN: f64 = 25.0;
const OPEN: f64 = -1.0;
const CLOSE: f64 = 1.0;
/// Horizontal alignment tolerance before descending.
const ALIGN: f64 = 0.01;
const HOVER: f64 = 0.08;
/// Clearance behind a puck or handle face before pushing.
const STANDOFF: f64 = 0.02;
const DOOR_STEP: f64 = 0.05;

fn toward(ee: &Vector3<f64>, target: &Vector3<f64>, grip: f64) -> Action {
    let d = (target - ee) * GAIN;
    [
        d.x.clamp(-1.0, 1.0),
        d.y.clamp(-1.0, 1.0),
        d.z.clamp(-1.0, 1.0),
        grip,
    ]
}

fn horizontal(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.xy() - b.xy()).norm()
}

fn with_z(p: &Vector3<f64>, z: f64) -> Vector3<f64> {
    Vector3::new(p.x, p.y, z)
}

/// Expert action for `task` in `state`.
pub fn scripted_policy(task: TaskId, state: &SimState) -> Action {
    let spec = task.spec();
    match &spec.policy {
        PolicySpec::Reach => toward(&state.ee, &state.goal, 0.0),
        PolicySpec::PushObject => push_object(state),
        PolicySpec::PushJoint => push_joint(task, state),
        PolicySpec::GraspJoint => grasp_joint(task, state),
        PolicySpec::PickPlace { carry_height } => {
            if state.attached {
                carry(state, *carry_height)
            } else {
                pick(state)
            }
        }
        PolicySpec::PegInsert { entry_offset } => {
            if state.attached {
                insert(state, *entry_offset)
            } else {
                pick(state)
            }
        }
    }
}

fn push_object(s: &SimState) -> Action {
    let to_goal = with_z(&(s.goal - s.obj1_pos), 0.0);
    if to_goal.norm() < 1e-9 {
        return [0.0, 0.0, 0.0, OPEN];
    }
    let dir = to_goal.normalize();
    let radius = Catalog::builtin().physics.puck_radius;
    let rel = with_z(&(s.ee - s.obj1_pos), 0.0);
    let along = rel.dot(&dir);
    let perp = (rel - dir * along).norm();
    let behind = s.obj1_pos - dir * (radius + STANDOFF);
    if along <= -(radius - 0.01) && perp <= 2.0 * ALIGN {
        if s.ee.z > s.obj1_pos.z + 0.015 {
            return toward(&s.ee, &behind, OPEN);
        }
        // Track the contact point behind the puck while leading toward the
        // goal; sliding tangentially around the puck does not push it.
        let contact = s.obj1_pos - dir * radius;
        let lead = to_goal.norm().min(0.04);
        return toward(&s.ee, &(contact + dir * lead), OPEN);
    }
    if s.ee.z < s.obj1_pos.z + 0.04 && horizontal(&s.ee, &behind) > ALIGN {
        // Rise before repositioning so the hand does not sweep the puck.
        return toward(&s.ee, &with_z(&s.ee, s.obj1_pos.z + HOVER), OPEN);
    }
    toward(&s.ee, &with_z(&behind, s.obj1_pos.z + HOVER), OPEN)
}

fn push_joint(task: TaskId, s: &SimState) -> Action {
    let spec = task.spec();
    let axis = match &spec.object {
        ObjectSpec::Prismatic { axis, .. } => *axis,
        _ => unreachable!("push_joint policies drive prismatic joints"),
    };
    let rel = s.ee - s.obj1_pos;
    let along = rel.dot(&axis);
    let perp = (rel - axis * along).norm();
    if perp <= ALIGN && along <= 0.001 {
        return toward(&s.ee, &(s.goal + axis * 0.005), OPEN);
    }
    let approach = s.obj1_pos - axis * 0.015;
    if horizontal(&s.ee, &approach) > ALIGN {
        return toward(&s.ee, &with_z(&approach, approach.z + 0.06), OPEN);
    }
    toward(&s.ee, &approach, OPEN)
}

fn grasp_joint(task: TaskId, s: &SimState) -> Action {
    let spec = task.spec();
    if !s.attached {
        if (s.ee - s.obj1_pos).norm() <= ALIGN {
            return toward(&s.ee, &s.obj1_pos, CLOSE);
        }
        return toward(&s.ee, &s.obj1_pos, OPEN);
    }
    let target = match &spec.object {
        ObjectSpec::Prismatic { axis, .. } => s.goal + axis * 0.005,
        ObjectSpec::Revolute { goal_angle, .. } => {
            let q = joint_position(spec, s).unwrap_or(0.0);
            let next = (q + DOOR_STEP).min(goal_angle + 0.02);
            handle_at(spec, &s.goal, next).unwrap_or(s.goal)
        }
        ObjectSpec::Free { .. } => unreachable!("grasp_joint policies drive joints"),
    };
    toward(&s.ee, &target, CLOSE)
}

fn pick(s: &SimState) -> Action {
    let obj = s.obj1_pos;
    if horizontal(&s.ee, &obj) > ALIGN {
        if s.ee.z < obj.z + 0.04 {
            return toward(&s.ee, &with_z(&s.ee, obj.z + HOVER), OPEN);
        }
        return toward(&s.ee, &with_z(&obj, obj.z + HOVER), OPEN);
    }
    if (s.ee - obj).norm() <= ALIGN {
        return toward(&s.ee, &obj, CLOSE);
    }
    toward(&s.ee, &obj, OPEN)
}

fn carry(s: &SimState, carry_height: f64) -> Action {
    if horizontal(&s.ee, &s.goal) <= ALIGN {
        return toward(&s.ee, &s.goal, CLOSE);
    }
    if s.ee.z < carry_height - 0.02 {
        return toward(&s.ee, &with_z(&s.ee, carry_height), CLOSE);
    }
    toward(&s.ee, &with_z(&s.goal, carry_height), CLOSE)
}

fn insert(s: &SimState, entry_offset: f64) -> Action {
    let aligned = (s.ee.y - s.goal.y).abs() <= 0.005 && (s.ee.z - s.goal.z).abs() <= 0.005;
    let entry = s.goal + Vector3::new(entry_offset, 0.0, 0.0);
    if aligned {
        return toward(&s.ee, &s.goal, CLOSE);
    }
    if s.ee.z < s.goal.z - 0.02 && horizontal(&s.ee, &entry) > ALIGN {
        return toward(&s.ee, &with_z(&s.ee, s.goal.z), CLOSE);
    }
    toward(&s.ee, &entry, CLOSE)
}
