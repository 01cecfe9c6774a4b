//! Masking samplers for the four self-supervised tasks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gen::mix_seed;
use crate::scene::types::{agent_attr, EgoState, Scene, SceneDims};

/// Agents shorter than this path length are not masked.
pub const MTR_MIN_PATH: f64 = 15.0;
/// Lanes shorter than this are not masked.
pub const MRR_MIN_LENGTH: f64 = 20.0;
/// The contiguous lane mask is drawn from the centered window of this many
/// points (the "middle 200").
pub const MRR_REGION: usize = 200;
/// Route points fed to the navigation encoder for the reconstruction task.
pub const MNR_INPUT_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Mtr,
    Mrr,
    Mnr,
    Etr,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Mtr, Task::Mrr, Task::Mnr, Task::Etr];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Mtr => "mtr",
            Task::Mrr => "mrr",
            Task::Mnr => "mnr",
            Task::Etr => "etr",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .iter()
            .find(|t| t.name() == s)
            .copied()
            .ok_or_else(|| crate::error::Error::Config(format!("unknown task `{s}`")))
    }
}

/// Masked index ranges per entity; `None` marks ineligible entities.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub task: Task,
    pub seed: u64,
    pub entities: Vec<Option<Vec<usize>>>,
}

impl MaskSpec {
    pub fn n_masked_entities(&self) -> usize {
        self.entities.iter().filter(|e| e.is_some()).count()
    }
}

/// Mask `round(ratio * T_h)` frames per eligible agent, uniformly without
/// replacement over its valid frames. Padded agents and those with path
/// length under 15 m are ignored; an agent must also keep at least one
/// visible frame.
pub fn sample_mtr_mask(scene: &Scene, dims: &SceneDims, seed: u64, ratio: f64) -> MaskSpec {
    let count = (ratio * dims.t_h as f64).round() as usize;
    let entities = scene
        .agents
        .iter()
        .enumerate()
        .map(|(a, track)| {
            if !track.any_valid() || track.path_length() < MTR_MIN_PATH {
                return None;
            }
            let valid_idx: Vec<usize> =
                (0..track.valid.len()).filter(|&t| track.valid[t]).collect();
            if valid_idx.len() <= count || count == 0 {
                return None;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, a as u64, 0x117));
            let mut picked: Vec<usize> = valid_idx
                .choose_multiple(&mut rng, count)
                .copied()
                .collect();
            picked.sort_unstable();
            Some(picked)
        })
        .collect();
    MaskSpec {
        task: Task::Mtr,
        seed,
        entities,
    }
}

/// Mask one contiguous window per eligible lane. The window length is
/// `floor(ratio * min(V, 200))` and its start is uniform over the centered
/// `min(V, 200)`-point region, so a full 200-point lane at ratio 0.5 gets a
/// 100-point window starting anywhere in [0, 100].
pub fn sample_mrr_mask(scene: &Scene, _dims: &SceneDims, seed: u64, ratio: f64) -> MaskSpec {
    let entities = scene
        .lanes
        .iter()
        .enumerate()
        .map(|(l, lane)| {
            if !lane.any_valid() || lane.valid_arc_length() < MRR_MIN_LENGTH {
                return None;
            }
            let valid_idx: Vec<usize> =
                (0..lane.valid.len()).filter(|&p| lane.valid[p]).collect();
            let v = valid_idx.len();
            let region = v.min(MRR_REGION);
            let len = ((ratio * region as f64).floor() as usize).max(1);
            if len >= region {
                return None;
            }
            let region_start = (v - region) / 2;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, l as u64, 0x211));
            let start = region_start + rng.gen_range(0..=(region - len));
            Some(valid_idx[start..start + len].to_vec())
        })
        .collect();
    MaskSpec {
        task: Task::Mrr,
        seed,
        entities,
    }
}

/// Split the route into the 20 input points closest to the ego and the next
/// `target_len` points to predict. Returns `None` (task skipped) when the
/// route is too short.
pub fn mnr_split(
    route_valid: &[bool],
    target_len: usize,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let valid_idx: Vec<usize> = (0..route_valid.len()).filter(|&p| route_valid[p]).collect();
    if valid_idx.len() < MNR_INPUT_LEN + target_len {
        return None;
    }
    let input = valid_idx[..MNR_INPUT_LEN].to_vec();
    let target = valid_idx[MNR_INPUT_LEN..MNR_INPUT_LEN + target_len].to_vec();
    Some((input, target))
}

/// Ego-tail split: head = frames `1..T_h/2` (0-based `0..T_h/2`), tail =
/// frames `T_h/2+1..T_h` (0-based `T_h/2..T_h`), and the current frame
/// regressed back to 1-based index `T_h/2 + 1`.
#[derive(Debug, Clone)]
pub struct EtrSplit {
    pub head: std::ops::Range<usize>,
    pub tail: std::ops::Range<usize>,
    /// 0-based history index of the regressed state.
    pub regressed_index: usize,
    pub regressed: EgoState,
}

pub fn etr_split(scene: &Scene, dims: &SceneDims) -> EtrSplit {
    let half = dims.t_h / 2;
    let idx = half; // 0-based; 1-based T_h/2 + 1
    let h = &scene.ego_history;
    let dt = dims.dt;
    // Steer is not stored per frame; recover it from the heading rate.
    let (hp, hm) = (
        h[[(idx + 1).min(dims.t_h), agent_attr::HEADING]] as f64,
        h[[idx - 1, agent_attr::HEADING]] as f64,
    );
    let span = ((idx + 1).min(dims.t_h) - (idx - 1)) as f64 * dt;
    let yaw_rate = crate::scene::wrap_angle(hp - hm) / span;
    let speed = ((h[[idx, agent_attr::VX]] as f64).powi(2)
        + (h[[idx, agent_attr::VY]] as f64).powi(2))
    .sqrt();
    let curvature = if speed > 0.5 { yaw_rate / speed } else { 0.0 };
    let regressed = EgoState {
        x: h[[idx, agent_attr::X]],
        y: h[[idx, agent_attr::Y]],
        heading: h[[idx, agent_attr::HEADING]],
        vx: h[[idx, agent_attr::VX]],
        vy: h[[idx, agent_attr::VY]],
        ax: h[[idx, agent_attr::AX]],
        ay: h[[idx, agent_attr::AY]],
        steer: (2.8 * curvature).atan() as f32,
        length: h[[idx, agent_attr::LENGTH]],
        width: h[[idx, agent_attr::WIDTH]],
        height: h[[idx, agent_attr::HEIGHT]],
    };
    EtrSplit {
        head: 0..half,
        tail: half..dims.t_h,
        regressed_index: idx,
        regressed,
    }
}

/// Apply a mask spec to an agent/lane matrix in entity-major row layout,
/// zeroing every attribute of the masked rows.
pub fn apply_mask_rows(matrix: &mut crate::nn::Arr, spec: &MaskSpec, rows_per_entity: usize) {
    for (e, masked) in spec.entities.iter().enumerate() {
        let Some(masked) = masked else { continue };
        for &t in masked {
            for v in matrix.row_mut(e * rows_per_entity + t).iter_mut() {
                *v = 0.0;
            }
        }
    }
}
