//! Scripted demonstration controllers and noisy rollouts for data collection.
//!
//! Both controllers are pure functions of the observation: a branch is chosen
//! from a fixed priority list and the action is a proportional move
//! `k · (target − gripper)` rescaled so its largest component is at most 1,
//! which keeps the direction exact.

mod perlin;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Trajectory;
use crate::env::{dist3, dist_xy, EnvAction, EnvError, Env, ObsVector, PhysicsConfig, TaskId, TaskSpec};

pub use perlin::{gradient_noise, perlin_sample, smoothstep, PerlinConfig, PerlinTrack, SLOPE_BOUND};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("controller rollouts run on data-collect-empty, got task `{0}`")]
    TaskMismatch(TaskId),
    #[error("unknown controller `{0}` (expected reactive-push or pick-and-place)")]
    UnknownKind(String),
    #[error("invalid noise config: {0}")]
    Noise(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    ReactivePush,
    PickAndPlace,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 2] = [ControllerKind::ReactivePush, ControllerKind::PickAndPlace];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::ReactivePush => "reactive-push",
            ControllerKind::PickAndPlace => "pick-and-place",
        }
    }

    pub fn act(self, obs: &ObsVector, cfg: &ControllerConfig) -> EnvAction {
        match self {
            ControllerKind::ReactivePush => reactive_push(obs, cfg),
            ControllerKind::PickAndPlace => pick_and_place(obs, cfg),
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ControllerError::UnknownKind(s.to_string()))
    }
}

/// Thresholds shared by both controllers. Distances in metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub gain: f64,
    pub at_goal: f64,
    /// Push location distance behind the block, in block half-sizes.
    pub push_offset: f64,
    pub block_half: f64,
    /// Slack of the "at push location" test across / along the push line.
    pub lateral_tolerance: f64,
    pub along_tolerance: f64,
    pub height_tolerance: f64,
    /// Lateral error at which pushing pauses to realign.
    pub align_tolerance: f64,
    /// Horizontal slack for "straight above the push location".
    pub descend_tolerance: f64,
    /// Largest action component while in contact with the block.
    pub push_speed: f64,
    /// Clearance above the block top when repositioning around it.
    pub hover: f64,
    pub grasp_radius: f64,
    pub grasp_z_gap: f64,
    /// Horizontal slack for "gripper above the object".
    pub above_tolerance: f64,
    /// Highest lift of the block bottom above the table while carrying.
    pub lift_cap: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gain: 5.0,
            at_goal: 0.05,
            push_offset: 1.5,
            block_half: 0.025,
            lateral_tolerance: 0.015,
            along_tolerance: 0.015,
            height_tolerance: 0.01,
            align_tolerance: 0.02,
            descend_tolerance: 0.006,
            push_speed: 0.3,
            hover: 0.03,
            grasp_radius: 0.03,
            grasp_z_gap: 0.02,
            above_tolerance: 0.01,
            lift_cap: 0.03,
        }
    }
}

struct View {
    gripper: [f64; 3],
    block: [f64; 3],
    attached: bool,
    goal: [f64; 3],
}

fn view(obs: &ObsVector) -> View {
    View {
        gripper: [obs[0], obs[1], obs[2]],
        block: [obs[4], obs[5], obs[6]],
        attached: obs[9] > 0.5,
        goal: [obs[13], obs[14], obs[15]],
    }
}

/// Proportional move toward `target`, scaled down so `max |v_i| ≤ 1`.
pub fn toward(from: [f64; 3], target: [f64; 3], gain: f64, grip: f64) -> EnvAction {
    let mut v = [0.0; 3];
    for i in 0..3 {
        v[i] = gain * (target[i] - from[i]);
    }
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m > 1.0 {
        for x in &mut v {
            *x /= m;
        }
    }
    [v[0], v[1], v[2], grip.clamp(-1.0, 1.0)]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PushBranch {
    AtGoal,
    Push,
    /// Straight above the push location: go down.
    Descend,
    /// Straight line to the push location is clear.
    Approach,
    /// Low and in the way: rise before going around the block.
    Lift,
    /// Travel above the push location.
    Hover,
}

struct PushGeometry {
    dir: [f64; 2],
    offset: f64,
    location: [f64; 3],
}

fn push_geometry(v: &View, cfg: &ControllerConfig) -> PushGeometry {
    let d = [v.goal[0] - v.block[0], v.goal[1] - v.block[1]];
    let n = d[0].hypot(d[1]);
    let dir = if n > 1e-12 { [d[0] / n, d[1] / n] } else { [1.0, 0.0] };
    let offset = cfg.push_offset * cfg.block_half;
    PushGeometry {
        dir,
        offset,
        location: [v.block[0] - dir[0] * offset, v.block[1] - dir[1] * offset, v.block[2]],
    }
}

/// Would the straight move from the gripper to `target` brush the block?
fn path_blocked(v: &View, target: [f64; 3], cfg: &ControllerConfig) -> bool {
    let (g, b) = (v.gripper, v.block);
    let seg = [target[0] - g[0], target[1] - g[1]];
    let len2 = seg[0] * seg[0] + seg[1] * seg[1];
    let tau = if len2 > 0.0 {
        (((b[0] - g[0]) * seg[0] + (b[1] - g[1]) * seg[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let p = [g[0] + tau * seg[0], g[1] + tau * seg[1]];
    let z = g[2] + tau * (target[2] - g[2]);
    let clearance = (p[0] - b[0]).hypot(p[1] - b[1]);
    clearance < cfg.push_offset * cfg.block_half - cfg.descend_tolerance
        && z < b[2] + cfg.block_half + cfg.height_tolerance
}

pub fn push_branch(obs: &ObsVector, cfg: &ControllerConfig) -> PushBranch {
    let v = view(obs);
    if dist3(v.block, v.goal) < cfg.at_goal {
        return PushBranch::AtGoal;
    }
    let geo = push_geometry(&v, cfg);
    let r = [v.gripper[0] - v.block[0], v.gripper[1] - v.block[1]];
    let along = r[0] * geo.dir[0] + r[1] * geo.dir[1];
    let lateral = (r[0] * geo.dir[1] - r[1] * geo.dir[0]).abs();
    let behind = along < 0.0 && along > -(geo.offset + cfg.along_tolerance);
    if behind && lateral < cfg.lateral_tolerance && (v.gripper[2] - v.block[2]).abs() < cfg.height_tolerance {
        return PushBranch::Push;
    }
    if dist_xy(v.gripper, geo.location) < cfg.descend_tolerance {
        return PushBranch::Descend;
    }
    if !path_blocked(&v, geo.location, cfg) {
        return PushBranch::Approach;
    }
    if v.gripper[2] < v.block[2] + cfg.block_half + cfg.height_tolerance {
        PushBranch::Lift
    } else {
        PushBranch::Hover
    }
}

/// Pushes the block along the block→goal line with the fingertip.
pub fn reactive_push(obs: &ObsVector, cfg: &ControllerConfig) -> EnvAction {
    let v = view(obs);
    let geo = push_geometry(&v, cfg);
    let hover_z = v.block[2] + cfg.block_half + cfg.hover;
    let target = match push_branch(obs, cfg) {
        PushBranch::AtGoal => return [0.0; 4],
        PushBranch::Push => {
            // Advance along the line, steer back onto it, hold block height.
            let r = [v.gripper[0] - v.block[0], v.gripper[1] - v.block[1]];
            let lateral = r[0] * geo.dir[1] - r[1] * geo.dir[0];
            let stop = [v.goal[0] - geo.dir[0] * geo.offset, v.goal[1] - geo.dir[1] * geo.offset];
            let remaining = (stop[0] - v.gripper[0]) * geo.dir[0] + (stop[1] - v.gripper[1]) * geo.dir[1];
            let align = (1.0 - lateral.abs() / cfg.align_tolerance).max(0.0);
            let speed = (cfg.gain * remaining).clamp(0.0, cfg.push_speed) * align;
            let mut a = [
                speed * geo.dir[0] - cfg.gain * lateral * geo.dir[1],
                speed * geo.dir[1] + cfg.gain * lateral * geo.dir[0],
                cfg.gain * (v.block[2] - v.gripper[2]),
            ];
            let m = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if m > 1.0 {
                a = a.map(|x| x / m);
            }
            return [a[0], a[1], a[2], 1.0];
        }
        PushBranch::Descend | PushBranch::Approach => geo.location,
        PushBranch::Lift => [v.gripper[0], v.gripper[1], hover_z],
        PushBranch::Hover => [geo.location[0], geo.location[1], hover_z],
    };
    toward(v.gripper, target, cfg.gain, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PickBranch {
    AtGoal,
    Carry,
    Close,
    Descend,
    MoveAbove,
}

pub fn pick_branch(obs: &ObsVector, cfg: &ControllerConfig) -> PickBranch {
    let v = view(obs);
    if dist3(v.block, v.goal) < cfg.at_goal {
        PickBranch::AtGoal
    } else if v.attached {
        PickBranch::Carry
    } else if dist_xy(v.gripper, v.block) < cfg.grasp_radius && (v.gripper[2] - v.block[2]).abs() < cfg.grasp_z_gap {
        PickBranch::Close
    } else if dist_xy(v.gripper, v.block) < cfg.above_tolerance && v.gripper[2] > v.block[2] {
        PickBranch::Descend
    } else {
        PickBranch::MoveAbove
    }
}

/// Grasps the block from above and carries it toward the goal without ever
/// lifting it more than `lift_cap` off the table.
pub fn pick_and_place(obs: &ObsVector, cfg: &ControllerConfig) -> EnvAction {
    let v = view(obs);
    match pick_branch(obs, cfg) {
        PickBranch::AtGoal => [0.0; 4],
        PickBranch::Carry => {
            let target = [v.goal[0], v.goal[1], cfg.block_half + cfg.lift_cap];
            toward(v.gripper, target, cfg.gain, -1.0)
        }
        PickBranch::Close => [0.0, 0.0, 0.0, -1.0],
        PickBranch::Descend => toward(v.gripper, v.block, cfg.gain, 1.0),
        PickBranch::MoveAbove => {
            let b = v.block;
            toward(v.gripper, [b[0], b[1], b[2] + 2.0 * cfg.block_half], cfg.gain, 1.0)
        }
    }
}

pub fn clip_action(a: EnvAction) -> EnvAction {
    a.map(|x| x.clamp(-1.0, 1.0))
}

/// Runs one controller episode on any task; `success` records whether the
/// episode ended with reward.
pub fn run_controller(
    task: &TaskSpec,
    physics: &PhysicsConfig,
    kind: ControllerKind,
    cfg: &ControllerConfig,
    noise: &PerlinConfig,
    seed: u64,
) -> Result<Trajectory, ControllerError> {
    noise.validate().map_err(ControllerError::Noise)?;
    let (mut env, mut obs) = Env::reset(task.clone(), physics.clone(), seed);
    let mut track = PerlinTrack::new(noise, seed);
    let mut traj = Trajectory::new(kind, seed);
    loop {
        let t = env.t();
        let base = kind.act(&obs, cfg);
        let n = track.sample(t);
        let mut a = [0.0; 4];
        for i in 0..4 {
            a[i] = base[i] + n[i];
        }
        let a = clip_action(a);
        let r = env.step(&a)?;
        traj.push(obs, a, r.reward);
        traj.success |= r.info.success;
        obs = r.obs;
        if r.done {
            return Ok(traj);
        }
    }
}

/// Noisy demonstration rollout in the data-collection environment.
pub fn rollout(
    task: &TaskSpec,
    physics: &PhysicsConfig,
    kind: ControllerKind,
    cfg: &ControllerConfig,
    noise: &PerlinConfig,
    seed: u64,
) -> Result<Trajectory, ControllerError> {
    if task.id != TaskId::DataCollectEmpty {
        return Err(ControllerError::TaskMismatch(task.id));
    }
    run_controller(task, physics, kind, cfg, noise, seed)
}

#[cfg(test)]
mod tests;
