//! Seeded synthetic driving-scenario generator and corpus builder.

pub mod agents;
pub mod corpus;
pub mod lane_graph;
pub mod map;
pub mod scene;

pub use corpus::{build_corpus, CorpusSizes};
pub use lane_graph::{Lane, LaneGeom, LaneGraph};
pub use scene::generate_scene;

use serde::{Deserialize, Serialize};

use crate::scene::SceneDims;

/// Road layouts produced by the map generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Straight,
    Curve,
    TJunction,
    Crossroad,
    LaneChange,
}

impl Layout {
    pub const ALL: [Layout; 5] = [
        Layout::Straight,
        Layout::Curve,
        Layout::TJunction,
        Layout::Crossroad,
        Layout::LaneChange,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Layout::Straight => "straight",
            Layout::Curve => "curve",
            Layout::TJunction => "t_junction",
            Layout::Crossroad => "crossroad",
            Layout::LaneChange => "lane_change",
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Layout {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Layout::ALL
            .iter()
            .find(|l| l.name() == s)
            .copied()
            .ok_or_else(|| crate::error::Error::Config(format!("unknown layout `{s}`")))
    }
}

/// Per-sample generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub layout: Layout,
    /// Surrounding agents to attempt to place.
    pub n_agents: usize,
    /// Desired-speed range in m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Fraction of agents with truncated (late-start) histories.
    pub short_history_frac: f64,
    /// Std-dev of Gaussian perception noise on agent history positions, in
    /// meters; zero disables it.
    pub noise_sigma: f64,
    pub dims: SceneDims,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            layout: Layout::Straight,
            n_agents: 8,
            speed_min: 3.0,
            speed_max: 14.0,
            short_history_frac: 0.25,
            noise_sigma: 0.1,
            dims: SceneDims::default(),
        }
    }
}

/// splitmix64; used to derive independent sub-seeds.
pub fn mix_seed(mut z: u64, a: u64, b: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(a.wrapping_mul(0xd1342543de82ef95));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = z.wrapping_add(b.wrapping_mul(0x94d049bb133111eb));
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
