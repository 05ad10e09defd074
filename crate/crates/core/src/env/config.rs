use serde::{Deserialize, Serialize};

use super::{Obstacle, TaskId, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    /// Gripper displacement per unit action per step (m).
    pub max_speed: f64,
    /// Aperture change per unit action per step.
    pub grip_speed: f64,
    /// Aperture below which the fingers hold the block.
    pub grasp_aperture: f64,
    pub grasp_radius: f64,
    pub grasp_z_gap: f64,
    pub finger_radius: f64,
    /// A gripper this close to the block centre has it between its fingers
    /// and does not push it.
    pub straddle_radius: f64,
    /// Velocity impulse per metre of fingertip overlap.
    pub push_stiffness: f64,
    pub block_half: f64,
    pub home: [f64; 3],
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            max_speed: 0.05,
            grip_speed: 0.25,
            grasp_aperture: 0.3,
            grasp_radius: 0.03,
            grasp_z_gap: 0.02,
            finger_radius: 0.005,
            straddle_radius: 0.01,
            push_stiffness: 1.0,
            block_half: 0.025,
            home: [0.5, 0.3, 0.12],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrayConfig {
    pub center: [f64; 2],
    /// Half-width of the inner floor.
    pub inner_half: f64,
    pub wall_thickness: f64,
    pub wall_height: f64,
}

impl TrayConfig {
    pub(super) fn walls(&self) -> [Obstacle; 4] {
        let [cx, cy] = self.center;
        let (i, o, h) = (self.inner_half, self.inner_half + self.wall_thickness, self.wall_height);
        [
            Obstacle { min: [cx - o, cy - o], max: [cx + o, cy - i], height: h },
            Obstacle { min: [cx - o, cy + i], max: [cx + o, cy + o], height: h },
            Obstacle { min: [cx - o, cy - i], max: [cx - i, cy + i], height: h },
            Obstacle { min: [cx + i, cy - i], max: [cx + o, cy + i], height: h },
        ]
    }
}

/// The large fixed block of the stacking task; `half` is its half-size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub center: [f64; 2],
    pub half: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskGeometry {
    pub horizon: usize,
    /// Per-step block velocity retention in [0, 1).
    pub friction: f64,
    pub success_tolerance: f64,
    /// Maximum block speed (m/step) that still counts as "at the goal".
    pub rest_speed: f64,
    /// `[x_lo, x_hi, y_lo, y_hi]`
    pub block_region: [f64; 4],
    pub goal_region: [f64; 4],
    pub min_goal_distance: f64,
    /// Fingers fixed open; nothing can be grasped.
    pub gripper_locked: bool,
    pub tray: Option<TrayConfig>,
    pub base: Option<BaseConfig>,
}

impl TaskGeometry {
    fn push_like(horizon: usize, friction: f64, locked: bool) -> Self {
        Self {
            horizon,
            friction,
            success_tolerance: 0.05,
            rest_speed: 0.005,
            block_region: [0.35, 0.65, 0.45, 0.65],
            goal_region: [0.25, 0.75, 0.35, 0.8],
            min_goal_distance: 0.12,
            gripper_locked: locked,
            tray: None,
            base: None,
        }
    }
}

/// Geometry for every task plus the shared physics constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub physics: PhysicsConfig,
    pub data_collect_empty: TaskGeometry,
    pub slippery_push: TaskGeometry,
    pub table_cleanup: TaskGeometry,
    pub pyramid_stack: TaskGeometry,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let data_collect_empty = TaskGeometry::push_like(120, 0.3, false);
        let slippery_push = TaskGeometry::push_like(100, 0.9, true);
        let table_cleanup = TaskGeometry {
            horizon: 50,
            friction: 0.3,
            success_tolerance: 0.05,
            rest_speed: 0.005,
            block_region: [0.35, 0.5, 0.45, 0.65],
            goal_region: [0.0; 4],
            min_goal_distance: 0.0,
            gripper_locked: false,
            tray: Some(TrayConfig {
                center: [0.7, 0.55],
                inner_half: 0.06,
                wall_thickness: 0.01,
                wall_height: 0.04,
            }),
            base: None,
        };
        let pyramid_stack = TaskGeometry {
            success_tolerance: 0.02,
            tray: None,
            base: Some(BaseConfig {
                center: [0.7, 0.55],
                half: 0.04,
            }),
            ..table_cleanup.clone()
        };
        Self {
            physics: PhysicsConfig::default(),
            data_collect_empty,
            slippery_push,
            table_cleanup,
            pyramid_stack,
        }
    }
}

impl EnvConfig {
    pub fn task(&self, id: TaskId) -> TaskSpec {
        let geometry = match id {
            TaskId::DataCollectEmpty => &self.data_collect_empty,
            TaskId::SlipperyPush => &self.slippery_push,
            TaskId::TableCleanup => &self.table_cleanup,
            TaskId::PyramidStack => &self.pyramid_stack,
        };
        TaskSpec {
            id,
            geometry: geometry.clone(),
        }
    }
}
