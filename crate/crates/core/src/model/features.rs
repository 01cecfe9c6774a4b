//! Scene tensors and input normalization for the model.
//!
//! [`SceneTensors`] carries raw-unit matrices extracted from a [`Scene`];
//! normalization happens inside the encoders so tests can mutate padded
//! contents at the tensor level. The finetune input path deliberately has no
//! ego-history field.

use ndarray::Array2;

use crate::nn::Arr;
use crate::scene::types::{agent_attr, lane_attr, route_attr, Scene, SceneDims};

pub const POS_SCALE: f64 = 50.0;
pub const ROUTE_POS_SCALE: f64 = 200.0;
pub const VEL_SCALE: f64 = 15.0;
pub const ACC_SCALE: f64 = 4.0;
pub const SIZE_SCALE: f64 = 5.0;
pub const ARC_SCALE: f64 = 100.0;

/// Raw-unit model inputs plus validity.
#[derive(Debug, Clone)]
pub struct SceneTensors {
    /// `[N * (T_h+1), 13]`, agent-major rows.
    pub agents: Arr,
    pub agent_valid: Vec<Vec<bool>>,
    /// `[M * P_m, 8]`, lane-major rows.
    pub lanes: Arr,
    pub lane_valid: Vec<Vec<bool>>,
    /// `[P_r, 3]`.
    pub route: Arr,
    pub route_valid: Vec<bool>,
    /// The 11 current-frame ego scalars.
    pub ego: [f64; 11],
    pub dims: SceneDims,
}

impl SceneTensors {
    pub fn from_scene(scene: &Scene, dims: &SceneDims) -> Self {
        let t1 = dims.history_len();
        let mut agents = Array2::zeros((dims.n_agents * t1, agent_attr::DIM));
        let mut agent_valid = Vec::with_capacity(dims.n_agents);
        for (a, track) in scene.agents.iter().enumerate() {
            for t in 0..t1 {
                for j in 0..agent_attr::DIM {
                    agents[[a * t1 + t, j]] = track.frames[[t, j]] as f64;
                }
            }
            agent_valid.push(track.valid.clone());
        }
        let mut lanes = Array2::zeros((dims.n_lanes * dims.p_m, lane_attr::DIM));
        let mut lane_valid = Vec::with_capacity(dims.n_lanes);
        for (l, lane) in scene.lanes.iter().enumerate() {
            for p in 0..dims.p_m {
                for j in 0..lane_attr::DIM {
                    lanes[[l * dims.p_m + p, j]] = lane.points[[p, j]] as f64;
                }
            }
            lane_valid.push(lane.valid.clone());
        }
        let mut route = Array2::zeros((dims.p_r, route_attr::DIM));
        for p in 0..dims.p_r {
            for j in 0..route_attr::DIM {
                route[[p, j]] = scene.route.points[[p, j]] as f64;
            }
        }
        let ego_f32 = scene.ego.to_array();
        let mut ego = [0.0f64; 11];
        for (i, v) in ego_f32.iter().enumerate() {
            ego[i] = *v as f64;
        }
        SceneTensors {
            agents,
            agent_valid,
            lanes,
            lane_valid,
            route,
            route_valid: scene.route.valid.clone(),
            ego,
            dims: *dims,
        }
    }

    pub fn agent_any_valid(&self, a: usize) -> bool {
        self.agent_valid[a].iter().any(|v| *v)
    }

    pub fn lane_any_valid(&self, l: usize) -> bool {
        self.lane_valid[l].iter().any(|v| *v)
    }

    /// Position of agent `a` at its last valid frame (the decode anchor).
    pub fn agent_anchor(&self, a: usize) -> Option<(f64, f64)> {
        let t1 = self.dims.history_len();
        let t = self.agent_valid[a].iter().rposition(|v| *v)?;
        Some((
            self.agents[[a * t1 + t, agent_attr::X]],
            self.agents[[a * t1 + t, agent_attr::Y]],
        ))
    }
}

/// Normalize agent attribute rows (any `[R, 13]` slice in track layout).
pub fn normalize_agent_rows(raw: &Arr) -> Arr {
    let mut out = raw.clone();
    for mut row in out.rows_mut() {
        row[agent_attr::X] /= POS_SCALE;
        row[agent_attr::Y] /= POS_SCALE;
        row[agent_attr::VX] /= VEL_SCALE;
        row[agent_attr::VY] /= VEL_SCALE;
        row[agent_attr::AX] /= ACC_SCALE;
        row[agent_attr::AY] /= ACC_SCALE;
        row[agent_attr::LOCAL_DX] /= POS_SCALE;
        row[agent_attr::LOCAL_DY] /= POS_SCALE;
        row[agent_attr::LENGTH] /= SIZE_SCALE;
        row[agent_attr::WIDTH] /= SIZE_SCALE;
        row[agent_attr::HEIGHT] /= SIZE_SCALE;
    }
    out
}

pub fn normalize_lane_rows(raw: &Arr) -> Arr {
    let mut out = raw.clone();
    for mut row in out.rows_mut() {
        row[lane_attr::X] /= POS_SCALE;
        row[lane_attr::Y] /= POS_SCALE;
        row[lane_attr::ARC_S] /= ARC_SCALE;
        row[lane_attr::LEFT_OFFSET] /= SIZE_SCALE;
        row[lane_attr::RIGHT_OFFSET] /= SIZE_SCALE;
    }
    out
}

pub fn normalize_route_rows(raw: &Arr) -> Arr {
    let mut out = raw.clone();
    for mut row in out.rows_mut() {
        row[route_attr::X] /= ROUTE_POS_SCALE;
        row[route_attr::Y] /= ROUTE_POS_SCALE;
    }
    out
}

/// The six ego-state variable groups in token order:
/// x, y, heading, velocity (vx, vy), acceleration (ax, ay), steer.
pub fn ego_groups(ego: &[f64; 11]) -> [Vec<f64>; 6] {
    [
        vec![ego[0] / POS_SCALE],
        vec![ego[1] / POS_SCALE],
        vec![ego[2]],
        vec![ego[3] / VEL_SCALE, ego[4] / VEL_SCALE],
        vec![ego[5] / ACC_SCALE, ego[6] / ACC_SCALE],
        vec![ego[7]],
    ]
}

/// Token indices that state dropout may zero: velocity, acceleration, steer.
/// Positions and heading (0..=2) are always kept.
pub const DROPPABLE_EGO_TOKENS: [usize; 3] = [3, 4, 5];
pub const N_EGO_TOKENS: usize = 6;
