use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::Mode;

/// Length of one frame: hand XYZ, gripper, two object poses.
pub const FRAME_LEN: usize = 18;
/// Current frame, previous frame, goal.
pub const OBS_LEN: usize = 2 * FRAME_LEN + 3;

pub type Frame = [f64; FRAME_LEN];

/// Full Markov state of one environment.
///
/// Articulation coordinates are not stored: they are recovered from the
/// handle position and the goal, which together pin the joint frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ee: Vector3<f64>,
    pub gripper_openness: f64,
    pub obj1_pos: Vector3<f64>,
    /// Unit quaternion `(w, x, y, z)`.
    pub obj1_quat: [f64; 4],
    pub obj2_pos: Vector3<f64>,
    pub obj2_quat: [f64; 4],
    pub attached: bool,
    pub goal: Vector3<f64>,
    pub step: u32,
}

impl SimState {
    pub fn frame(&self) -> Frame {
        let mut f = [0.0; FRAME_LEN];
        f[0..3].copy_from_slice(self.ee.as_slice());
        f[3] = self.gripper_openness;
        f[4..7].copy_from_slice(self.obj1_pos.as_slice());
        f[7..11].copy_from_slice(&self.obj1_quat);
        f[11..14].copy_from_slice(self.obj2_pos.as_slice());
        f[14..18].copy_from_slice(&self.obj2_quat);
        f
    }
}

/// Hidden memory of the staged (V1) reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct V1Memory {
    /// Set once the grasp (or contact) stage has completed this episode.
    pub grasp_latched: bool,
}

/// The 39-dimensional stacked, goal-conditioned observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_LEN]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn current(&self) -> &[f64] {
        &self.0[..FRAME_LEN]
    }

    pub fn previous(&self) -> &[f64] {
        &self.0[FRAME_LEN..2 * FRAME_LEN]
    }

    pub fn goal(&self) -> &[f64] {
        &self.0[2 * FRAME_LEN..]
    }
}

impl Serialize for Observation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

/// Concatenate `[current | previous | goal]`, zeroing the goal in meta mode.
pub fn assemble_observation(
    current: &Frame,
    previous: &Frame,
    goal: &Vector3<f64>,
    mode: Mode,
) -> Observation {
    let mut v = [0.0; OBS_LEN];
    v[..FRAME_LEN].copy_from_slice(current);
    v[FRAME_LEN..2 * FRAME_LEN].copy_from_slice(previous);
    if mode == Mode::Multitask {
        v[2 * FRAME_LEN..].copy_from_slice(goal.as_slice());
    }
    Observation(v)
}
