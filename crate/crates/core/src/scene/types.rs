//! Scene domain types: ego state, agent tracks, map lanes, navigation route.
//!
//! Scene payloads are stored as `f32` (the on-disk precision); geometry is
//! computed in `f64` upstream and quantized once at scene assembly.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame agent attribute layout (`D_n` = 13).
pub mod agent_attr {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const HEADING: usize = 2;
    pub const VX: usize = 3;
    pub const VY: usize = 4;
    pub const AX: usize = 5;
    pub const AY: usize = 6;
    pub const LOCAL_DX: usize = 7;
    pub const LOCAL_DY: usize = 8;
    pub const LENGTH: usize = 9;
    pub const WIDTH: usize = 10;
    pub const HEIGHT: usize = 11;
    pub const VALID: usize = 12;
    pub const DIM: usize = 13;
}

/// Per-point lane attribute layout (`D_m` = 8).
pub mod lane_attr {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const HEADING: usize = 2;
    pub const ARC_S: usize = 3;
    pub const LANE_TYPE: usize = 4;
    pub const COLOR: usize = 5;
    pub const LEFT_OFFSET: usize = 6;
    pub const RIGHT_OFFSET: usize = 7;
    pub const DIM: usize = 8;
}

/// Per-point route attribute layout (`D_r` = 3).
pub mod route_attr {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const HEADING: usize = 2;
    pub const DIM: usize = 3;
}

pub const EGO_DIM: usize = 11;
pub const LANE_POINT_SPACING: f64 = 0.5;
pub const ROUTE_ORIGIN_RADIUS: f64 = 5.0;

/// Fixed tensor capacities and horizons shared by a dataset and the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneDims {
    /// Agent capacity N.
    pub n_agents: usize,
    /// Lane capacity M.
    pub n_lanes: usize,
    /// History frames (past); a track holds `t_h + 1` frames.
    pub t_h: usize,
    /// Future frames.
    pub t_f: usize,
    /// Points per lane P_m.
    pub p_m: usize,
    /// Route points P_r.
    pub p_r: usize,
    /// Frame interval in seconds.
    pub dt: f64,
    /// Route resampling interval in meters.
    pub route_spacing: f64,
}

impl Default for SceneDims {
    fn default() -> Self {
        SceneDims {
            n_agents: 30,
            n_lanes: 30,
            t_h: 40,
            t_f: 50,
            p_m: 200,
            p_r: 500,
            dt: 0.1,
            route_spacing: 3.0,
        }
    }
}

impl SceneDims {
    pub fn history_len(&self) -> usize {
        self.t_h + 1
    }
}

/// Current-frame state of the ego vehicle (`D_e` = 11 scalars).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EgoState {
    pub x: f32,
    pub y: f32,
    pub heading: f32,
    pub vx: f32,
    pub vy: f32,
    pub ax: f32,
    pub ay: f32,
    pub steer: f32,
    pub length: f32,
    pub width: f32,
    pub height: f32,
}

impl EgoState {
    pub fn to_array(&self) -> [f32; EGO_DIM] {
        [
            self.x,
            self.y,
            self.heading,
            self.vx,
            self.vy,
            self.ax,
            self.ay,
            self.steer,
            self.length,
            self.width,
            self.height,
        ]
    }

    pub fn from_array(a: &[f32; EGO_DIM]) -> Self {
        EgoState {
            x: a[0],
            y: a[1],
            heading: a[2],
            vx: a[3],
            vy: a[4],
            ax: a[5],
            ay: a[6],
            steer: a[7],
            length: a[8],
            width: a[9],
            height: a[10],
        }
    }
}

/// One surrounding agent: `[T_h + 1, D_n]` frames with per-frame validity.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub frames: Array2<f32>,
    pub valid: Vec<bool>,
}

impl AgentTrack {
    pub fn empty(dims: &SceneDims) -> Self {
        AgentTrack {
            frames: Array2::zeros((dims.history_len(), agent_attr::DIM)),
            valid: vec![false; dims.history_len()],
        }
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|v| *v)
    }

    /// Cumulative arc length over the valid frames' positions.
    pub fn path_length(&self) -> f64 {
        let mut len = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for (t, &v) in self.valid.iter().enumerate() {
            if !v {
                continue;
            }
            let p = (
                self.frames[[t, agent_attr::X]] as f64,
                self.frames[[t, agent_attr::Y]] as f64,
            );
            if let Some(q) = prev {
                len += ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            }
            prev = Some(p);
        }
        len
    }
}

/// One map lane: `[P_m, D_m]` centerline points with per-point validity.
#[derive(Debug, Clone, PartialEq)]
pub struct MapLane {
    pub points: Array2<f32>,
    pub valid: Vec<bool>,
}

impl MapLane {
    pub fn empty(dims: &SceneDims) -> Self {
        MapLane {
            points: Array2::zeros((dims.p_m, lane_attr::DIM)),
            valid: vec![false; dims.p_m],
        }
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|v| *v)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Arc length spanned by the valid points (from the stored `arc_length_s`).
    pub fn valid_arc_length(&self) -> f64 {
        let idx: Vec<usize> = (0..self.valid.len()).filter(|&i| self.valid[i]).collect();
        match (idx.first(), idx.last()) {
            (Some(&a), Some(&b)) if b > a => {
                (self.points[[b, lane_attr::ARC_S]] - self.points[[a, lane_attr::ARC_S]]) as f64
            }
            _ => 0.0,
        }
    }
}

/// Navigation route: `[P_r, D_r]` points with prefix validity.
#[derive(Debug, Clone, PartialEq)]
pub struct NavigationRoute {
    pub points: Array2<f32>,
    pub valid: Vec<bool>,
}

impl NavigationRoute {
    pub fn empty(dims: &SceneDims) -> Self {
        NavigationRoute {
            points: Array2::zeros((dims.p_r, route_attr::DIM)),
            valid: vec![false; dims.p_r],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Ground-truth future of one agent: `[T_f, 2]` positions with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentFuture {
    pub points: Array2<f32>,
    pub valid: Vec<bool>,
}

impl AgentFuture {
    pub fn empty(dims: &SceneDims) -> Self {
        AgentFuture {
            points: Array2::zeros((dims.t_f, 2)),
            valid: vec![false; dims.t_f],
        }
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|v| *v)
    }
}

/// One labeled sample in the ego-centric frame of the reference timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub ego: EgoState,
    pub agents: Vec<AgentTrack>,
    pub lanes: Vec<MapLane>,
    pub route: NavigationRoute,
    /// Ego history `[T_h + 1, D_n]`, kept for ego-tail pretraining only; the
    /// finetune forward path never reads it.
    pub ego_history: Array2<f32>,
    /// Ground-truth ego future `[T_f, 2]`.
    pub ego_future: Array2<f32>,
    pub agent_futures: Vec<AgentFuture>,
}

/// Per-entity and per-step validity view over a scene.
#[derive(Debug, Clone)]
pub struct ValidityMask {
    pub agent_steps: Vec<Vec<bool>>,
    pub agent_any: Vec<bool>,
    pub lane_points: Vec<Vec<bool>>,
    pub lane_any: Vec<bool>,
    pub route_points: Vec<bool>,
}

impl Scene {
    pub fn empty(dims: &SceneDims) -> Self {
        Scene {
            ego: EgoState::default(),
            agents: vec![AgentTrack::empty(dims); dims.n_agents],
            lanes: vec![MapLane::empty(dims); dims.n_lanes],
            route: NavigationRoute::empty(dims),
            ego_history: Array2::zeros((dims.history_len(), agent_attr::DIM)),
            ego_future: Array2::zeros((dims.t_f, 2)),
            agent_futures: vec![AgentFuture::empty(dims); dims.n_agents],
        }
    }

    pub fn validity(&self) -> ValidityMask {
        ValidityMask {
            agent_steps: self.agents.iter().map(|a| a.valid.clone()).collect(),
            agent_any: self.agents.iter().map(|a| a.any_valid()).collect(),
            lane_points: self.lanes.iter().map(|l| l.valid.clone()).collect(),
            lane_any: self.lanes.iter().map(|l| l.any_valid()).collect(),
            route_points: self.route.valid.clone(),
        }
    }

    /// Check every structural invariant; the corpus builder rejects violators.
    pub fn validate(&self, dims: &SceneDims) -> Result<()> {
        let t1 = dims.history_len();
        let heading_tol = 1e-5;
        let pi = std::f64::consts::PI;

        // Ego: finite, positive dims, anchored at the origin.
        let ego = self.ego.to_array();
        if ego.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite ego state".into()));
        }
        if self.ego.length <= 0.0 || self.ego.width <= 0.0 || self.ego.height <= 0.0 {
            return Err(Error::InvalidInput("non-positive ego dimensions".into()));
        }
        if self.ego.x != 0.0 || self.ego.y != 0.0 || self.ego.heading != 0.0 {
            return Err(Error::InvalidInput(
                "ego reference pose must be the origin".into(),
            ));
        }

        if self.agents.len() != dims.n_agents || self.agent_futures.len() != dims.n_agents {
            return Err(Error::InvalidInput("agent slot count mismatch".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.frames.dim() != (t1, agent_attr::DIM) || a.valid.len() != t1 {
                return Err(Error::InvalidInput(format!("agent {i} shape mismatch")));
            }
            for t in 0..t1 {
                let row = a.frames.row(t);
                if a.valid[t] {
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidInput(format!(
                            "agent {i} frame {t} non-finite"
                        )));
                    }
                    if row[agent_attr::VALID] != 1.0 {
                        return Err(Error::InvalidInput(format!(
                            "agent {i} frame {t} validity flag must be 1"
                        )));
                    }
                    let h = row[agent_attr::HEADING] as f64;
                    if h.abs() > pi + heading_tol {
                        return Err(Error::InvalidInput(format!(
                            "agent {i} frame {t} heading out of range"
                        )));
                    }
                } else if row.iter().any(|v| *v != 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "agent {i} padded frame {t} must be all-zero"
                    )));
                }
            }
        }

        if self.lanes.len() != dims.n_lanes {
            return Err(Error::InvalidInput("lane slot count mismatch".into()));
        }
        for (i, l) in self.lanes.iter().enumerate() {
            if l.points.dim() != (dims.p_m, lane_attr::DIM) || l.valid.len() != dims.p_m {
                return Err(Error::InvalidInput(format!("lane {i} shape mismatch")));
            }
            let mut prev_s: Option<f64> = None;
            for p in 0..dims.p_m {
                let row = l.points.row(p);
                if l.valid[p] {
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidInput(format!("lane {i} point {p} non-finite")));
                    }
                    for &attr in &[lane_attr::LANE_TYPE, lane_attr::COLOR] {
                        let v = row[attr] as f64;
                        if v < 0.0 || v > 15.0 || v.fract() != 0.0 {
                            return Err(Error::InvalidInput(format!(
                                "lane {i} point {p} type/color code not a small integer"
                            )));
                        }
                    }
                    let s = row[lane_attr::ARC_S] as f64;
                    if let Some(ps) = prev_s {
                        if (s - ps - LANE_POINT_SPACING).abs() > 1e-6 {
                            return Err(Error::InvalidInput(format!(
                                "lane {i} point {p} arc spacing {} != 0.5",
                                s - ps
                            )));
                        }
                    }
                    prev_s = Some(s);
                } else {
                    if row.iter().any(|v| *v != 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "lane {i} padded point {p} must be all-zero"
                        )));
                    }
                    prev_s = None;
                }
            }
        }

        // Route: prefix-valid, origin near the ego, zero-padded tail.
        if self.route.points.dim() != (dims.p_r, route_attr::DIM)
            || self.route.valid.len() != dims.p_r
        {
            return Err(Error::InvalidInput("route shape mismatch".into()));
        }
        let n_route = self.route.valid_count();
        if self.route.valid[..n_route].iter().any(|v| !*v)
            || self.route.valid[n_route..].iter().any(|v| *v)
        {
            return Err(Error::InvalidInput("route validity must be a prefix".into()));
        }
        if n_route > 0 {
            let x = self.route.points[[0, route_attr::X]] as f64;
            let y = self.route.points[[0, route_attr::Y]] as f64;
            if (x * x + y * y).sqrt() > ROUTE_ORIGIN_RADIUS {
                return Err(Error::InvalidInput(
                    "route must originate within 5 m of the ego".into(),
                ));
            }
        }
        for p in 0..dims.p_r {
            let row = self.route.points.row(p);
            if self.route.valid[p] {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("route point {p} non-finite")));
                }
            } else if row.iter().any(|v| *v != 0.0) {
                return Err(Error::InvalidInput(format!(
                    "route padded point {p} must be all-zero"
                )));
            }
        }

        // Ego history: full, finite, flagged valid.
        if self.ego_history.dim() != (t1, agent_attr::DIM) {
            return Err(Error::InvalidInput("ego history shape mismatch".into()));
        }
        for t in 0..t1 {
            let row = self.ego_history.row(t);
            if row.iter().any(|v| !v.is_finite()) || row[agent_attr::VALID] != 1.0 {
                return Err(Error::InvalidInput(format!("ego history frame {t} invalid")));
            }
        }

        // Labels.
        if self.ego_future.dim() != (dims.t_f, 2) {
            return Err(Error::InvalidInput("ego future shape mismatch".into()));
        }
        if self.ego_future.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("ego future non-finite".into()));
        }
        for (i, f) in self.agent_futures.iter().enumerate() {
            if f.points.dim() != (dims.t_f, 2) || f.valid.len() != dims.t_f {
                return Err(Error::InvalidInput(format!("agent {i} future shape mismatch")));
            }
            if !self.agents[i].any_valid() && f.any_valid() {
                return Err(Error::InvalidInput(format!(
                    "padded agent {i} must not carry future labels"
                )));
            }
            for t in 0..dims.t_f {
                let row = f.points.row(t);
                if f.valid[t] {
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidInput(format!(
                            "agent {i} future step {t} non-finite"
                        )));
                    }
                } else if row.iter().any(|v| *v != 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "agent {i} padded future step {t} must be all-zero"
                    )));
                }
            }
        }
        Ok(())
    }
}
