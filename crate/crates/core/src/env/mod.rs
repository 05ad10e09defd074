//! Deterministic 2.5-D tabletop simulator.
//!
//! A point gripper with a one-dimensional aperture moves a single block on a
//! unit table. Contacts are circle overlaps in the table plane; the block
//! slides with per-step velocity retention `friction`; static obstacles (tray
//! walls, a base block) stop horizontal block motion below their height.

mod config;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BaseConfig, EnvConfig, PhysicsConfig, TaskGeometry, TrayConfig};

pub const OBS_DIM: usize = 16;
pub const ACT_DIM: usize = 4;
pub const WORKSPACE_MAX: [f64; 3] = [1.0, 1.0, 0.5];

pub type ObsVector = [f64; OBS_DIM];
pub type EnvAction = [f64; ACT_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown task `{0}` (expected data-collect-empty, slippery-push, table-cleanup or pyramid-stack)")]
    UnknownTask(String),
    #[error("step called after the episode finished")]
    EpisodeDone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    DataCollectEmpty,
    SlipperyPush,
    TableCleanup,
    PyramidStack,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [
        TaskId::DataCollectEmpty,
        TaskId::SlipperyPush,
        TaskId::TableCleanup,
        TaskId::PyramidStack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::DataCollectEmpty => "data-collect-empty",
            TaskId::SlipperyPush => "slippery-push",
            TaskId::TableCleanup => "table-cleanup",
            TaskId::PyramidStack => "pyramid-stack",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| EnvError::UnknownTask(s.to_string()))
    }
}

/// A task id together with its geometry and tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub geometry: TaskGeometry,
}

/// Axis-aligned static box standing on the table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
}

impl Obstacle {
    /// Does a disc of `radius` centred at `p` overlap the footprint?
    fn overlaps_disc(&self, p: [f64; 2], radius: f64) -> bool {
        let cx = p[0].clamp(self.min[0], self.max[0]);
        let cy = p[1].clamp(self.min[1], self.max[1]);
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        dx * dx + dy * dy < radius * radius
    }

}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub gripper: [f64; 3],
    pub aperture: f64,
    pub block: [f64; 3],
    pub block_vel: [f64; 2],
    pub block_half: f64,
    pub attached: bool,
    pub goal: [f64; 3],
    pub obstacles: Vec<Obstacle>,
    pub friction: f64,
}

impl WorldState {
    pub fn block_speed(&self) -> f64 {
        self.block_vel[0].hypot(self.block_vel[1])
    }

    /// Height of the highest surface under the block footprint at `xy`.
    pub fn support_height(&self, xy: [f64; 2]) -> f64 {
        self.obstacles
            .iter()
            .filter(|o| o.overlaps_disc(xy, self.block_half))
            .map(|o| o.height)
            .fold(0.0, f64::max)
    }

    /// Would a block with its bottom at `bottom` collide with a wall at `xy`?
    fn blocked(&self, xy: [f64; 2], bottom: f64) -> bool {
        self.obstacles
            .iter()
            .any(|o| o.height > bottom + 1e-9 && o.overlaps_disc(xy, self.block_half))
    }

    fn resting_z(&self) -> f64 {
        self.support_height([self.block[0], self.block[1]]) + self.block_half
    }
}

/// Flattens the world into the 16-d observation.
pub fn observe(w: &WorldState) -> ObsVector {
    let g = w.gripper;
    let b = w.block;
    [
        g[0],
        g[1],
        g[2],
        w.aperture,
        b[0],
        b[1],
        b[2],
        w.block_vel[0],
        w.block_vel[1],
        if w.attached { 1.0 } else { 0.0 },
        b[0] - g[0],
        b[1] - g[1],
        b[2] - g[2],
        w.goal[0],
        w.goal[1],
        w.goal[2],
    ]
}

/// Task success predicate.
pub fn success(w: &WorldState, task: &TaskSpec) -> bool {
    let tol = task.geometry.success_tolerance;
    let b = w.block;
    match task.id {
        TaskId::DataCollectEmpty | TaskId::SlipperyPush => {
            dist3(b, w.goal) < tol && w.block_speed() <= task.geometry.rest_speed
        }
        TaskId::TableCleanup => {
            let Some(tray) = &task.geometry.tray else { return false };
            let inside = (b[0] - tray.center[0]).abs() <= tray.inner_half
                && (b[1] - tray.center[1]).abs() <= tray.inner_half;
            inside && !w.attached && (b[2] - w.block_half).abs() < 1e-9
        }
        TaskId::PyramidStack => {
            let Some(base) = &task.geometry.base else { return false };
            let dxy = (b[0] - base.center[0]).hypot(b[1] - base.center[1]);
            let top = 2.0 * base.half + w.block_half;
            dxy < tol && (b[2] - top).abs() < 1e-9 && !w.attached
        }
    }
}

pub fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn dist_xy(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub success: bool,
    /// Euclidean block displacement caused by this step (m).
    pub block_displacement: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: ObsVector,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One environment instance. Not shareable across threads while stepping;
/// clone it instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Env {
    task: TaskSpec,
    physics: PhysicsConfig,
    world: WorldState,
    t: usize,
    done: bool,
}

fn sample_in(rng: &mut ChaCha8Rng, region: [f64; 4]) -> [f64; 2] {
    [
        rng.random_range(region[0]..=region[1]),
        rng.random_range(region[2]..=region[3]),
    ]
}

impl Env {
    /// Builds the initial world for `(task, seed)`; fully deterministic.
    pub fn reset(task: TaskSpec, physics: PhysicsConfig, seed: u64) -> (Self, ObsVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7ab1e);
        let g = &task.geometry;
        let half = physics.block_half;
        let mut obstacles = Vec::new();
        if let Some(tray) = &g.tray {
            obstacles.extend(tray.walls());
        }
        if let Some(base) = &g.base {
            obstacles.push(Obstacle {
                min: [base.center[0] - base.half, base.center[1] - base.half],
                max: [base.center[0] + base.half, base.center[1] + base.half],
                height: 2.0 * base.half,
            });
        }
        let block_xy = sample_in(&mut rng, g.block_region);
        let goal = match task.id {
            TaskId::DataCollectEmpty | TaskId::SlipperyPush => {
                let mut xy = sample_in(&mut rng, g.goal_region);
                let mut tries = 0;
                while (xy[0] - block_xy[0]).hypot(xy[1] - block_xy[1]) < g.min_goal_distance && tries < 1000 {
                    xy = sample_in(&mut rng, g.goal_region);
                    tries += 1;
                }
                [xy[0], xy[1], half]
            }
            TaskId::TableCleanup => {
                let c = g.tray.as_ref().map(|t| t.center).unwrap_or([0.5, 0.5]);
                [c[0], c[1], half]
            }
            TaskId::PyramidStack => {
                let b = g.base.as_ref().map(|b| (b.center, b.half)).unwrap_or(([0.5, 0.5], 0.0));
                [b.0[0], b.0[1], 2.0 * b.1 + half]
            }
        };
        let world = WorldState {
            gripper: physics.home,
            aperture: 1.0,
            block: [block_xy[0], block_xy[1], half],
            block_vel: [0.0, 0.0],
            block_half: half,
            attached: false,
            goal,
            obstacles,
            friction: g.friction,
        };
        let obs = observe(&world);
        (
            Self {
                task,
                physics,
                world,
                t: 0,
                done: false,
            },
            obs,
        )
    }

    /// Starts an episode from an explicit world (used by tests and replays).
    pub fn from_world(task: TaskSpec, physics: PhysicsConfig, world: WorldState) -> Self {
        Self {
            task,
            physics,
            world,
            t: 0,
            done: false,
        }
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn physics(&self) -> &PhysicsConfig {
        &self.physics
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn horizon(&self) -> usize {
        self.task.geometry.horizon
    }

    pub fn observe(&self) -> ObsVector {
        observe(&self.world)
    }

    pub fn step(&mut self, action: &EnvAction) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let before = self.world.block;
        advance(&mut self.world, &self.physics, self.task.geometry.gripper_locked, action);
        self.t += 1;
        let ok = success(&self.world, &self.task);
        self.done = ok || self.t >= self.task.geometry.horizon;
        let after = self.world.block;
        Ok(StepResult {
            obs: observe(&self.world),
            reward: if ok { 1.0 } else { 0.0 },
            done: self.done,
            info: StepInfo {
                success: ok,
                block_displacement: dist3(before, after),
            },
        })
    }
}

/// Applies one step of kinematics to `w`. Depends only on `(w, action)`.
pub fn advance(w: &mut WorldState, p: &PhysicsConfig, gripper_locked: bool, action: &EnvAction) {
    let a = action.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) });
    let half = w.block_half;

    // Gripper motion; an attached block is carried and can be stopped by walls.
    let mut target = [0.0; 3];
    for i in 0..3 {
        target[i] = (w.gripper[i] + a[i] * p.max_speed).clamp(0.0, WORKSPACE_MAX[i]);
    }
    w.aperture = if gripper_locked {
        1.0
    } else {
        (w.aperture + a[3] * p.grip_speed).clamp(0.0, 1.0)
    };
    if w.attached {
        let mut xy = [
            target[0].clamp(half, 1.0 - half),
            target[1].clamp(half, 1.0 - half),
        ];
        if w.blocked(xy, target[2] - half) {
            xy = [w.block[0], w.block[1]];
        }
        let floor = w.support_height(xy) + half;
        let z = target[2].max(floor);
        w.gripper = [xy[0], xy[1], z];
        w.block = w.gripper;
    } else {
        w.gripper = target;
    }

    // Grasp and release.
    if w.attached && w.aperture >= p.grasp_aperture {
        w.attached = false;
        w.block[2] = w.resting_z();
        w.block_vel = [0.0, 0.0];
    } else if !w.attached
        && !gripper_locked
        && w.aperture < p.grasp_aperture
        && dist_xy(w.gripper, w.block) < p.grasp_radius
        && (w.gripper[2] - w.block[2]).abs() < p.grasp_z_gap
    {
        w.attached = true;
        w.block_vel = [0.0, 0.0];
        w.gripper = w.block;
    }
    if w.attached {
        return;
    }

    // Push: fingertip disc against block disc at block height.
    if w.gripper[2] < w.block[2] + half {
        let d = [w.block[0] - w.gripper[0], w.block[1] - w.gripper[1]];
        let dist = d[0].hypot(d[1]);
        let overlap = p.finger_radius + half - dist;
        if overlap > 0.0 && dist > p.straddle_radius {
            let k = p.push_stiffness * overlap / dist;
            w.block_vel[0] += k * d[0];
            w.block_vel[1] += k * d[1];
        }
    }

    // Slide, stop at table edges and walls, decay.
    if w.block_vel != [0.0, 0.0] {
        let mut xy = [w.block[0] + w.block_vel[0], w.block[1] + w.block_vel[1]];
        for i in 0..2 {
            if xy[i] < half || xy[i] > 1.0 - half {
                xy[i] = xy[i].clamp(half, 1.0 - half);
                w.block_vel[i] = 0.0;
            }
        }
        if w.blocked(xy, w.block[2] - half) {
            w.block_vel = [0.0, 0.0];
        } else {
            w.block[0] = xy[0];
            w.block[1] = xy[1];
        }
        w.block_vel[0] *= w.friction;
        w.block_vel[1] *= w.friction;
        if w.block_speed() < 1e-6 {
            w.block_vel = [0.0, 0.0];
        }
        w.block[2] = w.resting_z();
    }
}

#[cfg(test)]
mod tests;
