//! Procedural road layouts.
//!
//! All maps are built around the origin with the main corridor heading east.
//! Junction connectors use radii >= 10 m so curvature stays within 0.1 /m.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::lane_graph::{LaneGeom, LaneGraph};
use super::Layout;
use crate::scene::frame::Pose2;

pub const LANE_WIDTH: f64 = 3.5;
/// Half-extent of the junction box in T-junction/crossroad layouts.
const JUNCTION_HALF: f64 = 12.0;

/// Chains the ego vehicle may drive; agents use any chain.
#[derive(Debug, Clone)]
pub struct GeneratedMap {
    pub graph: LaneGraph,
    pub ego_chains: Vec<Vec<usize>>,
}

/// Build a deterministic lane graph for the layout. The same seed always
/// produces identical geometry.
pub fn generate_map(layout: Layout, rng: &mut ChaCha8Rng) -> GeneratedMap {
    match layout {
        Layout::Straight | Layout::LaneChange => {
            let n_lanes = 2 + rng.gen_range(0..2usize);
            straight(rng, n_lanes)
        }
        Layout::Curve => curve(rng),
        Layout::TJunction => t_junction(rng),
        Layout::Crossroad => crossroad(rng),
    }
}

/// Parallel eastbound lanes, each split into chained segments so route
/// extension exercises successor links.
fn straight(rng: &mut ChaCha8Rng, n_lanes: usize) -> GeneratedMap {
    let mut g = LaneGraph::default();
    let n_segs = rng.gen_range(2..=3usize);
    let seg_len: Vec<f64> = (0..n_segs).map(|_| rng.gen_range(90.0..140.0)).collect();
    let x0 = -rng.gen_range(60.0..100.0);
    let mut ego_chains = Vec::new();
    for lane_i in 0..n_lanes {
        let y = lane_i as f64 * LANE_WIDTH;
        let color = if lane_i == 0 { 1 } else { 0 };
        let mut chain = Vec::new();
        let mut x = x0;
        for len in &seg_len {
            let id = g.push(
                LaneGeom::Line {
                    start: Pose2::new(x, y, 0.0),
                    length: *len,
                },
                0,
                color,
                LANE_WIDTH,
            );
            if let Some(&prev) = chain.last() {
                g.link(prev, id);
            }
            chain.push(id);
            x += len;
        }
        ego_chains.push(chain);
    }
    GeneratedMap {
        graph: g,
        ego_chains,
    }
}

/// Lead-in straight, circular arc, exit straight; two parallel lanes.
fn curve(rng: &mut ChaCha8Rng) -> GeneratedMap {
    let mut g = LaneGraph::default();
    let lead = rng.gen_range(60.0..110.0);
    let exit = rng.gen_range(60.0..110.0);
    let radius = rng.gen_range(40.0..160.0);
    let sweep_mag = rng.gen_range(0.5..1.3);
    let sweep = if rng.gen_bool(0.5) { sweep_mag } else { -sweep_mag };
    let x0 = -rng.gen_range(50.0..90.0);
    let mut ego_chains = Vec::new();
    for lane_i in 0..2usize {
        let y = lane_i as f64 * LANE_WIDTH;
        // Inner lane of the turn has a smaller radius.
        let r = if sweep > 0.0 {
            radius - y
        } else {
            radius + y
        };
        let a = g.push(
            LaneGeom::Line {
                start: Pose2::new(x0, y, 0.0),
                length: lead - x0.abs() * 0.0,
            },
            0,
            0,
            LANE_WIDTH,
        );
        let arc_start = g.lanes[a].geom.end_pose();
        let b = g.push(LaneGeom::arc_from_start(arc_start, r, sweep), 0, 0, LANE_WIDTH);
        let exit_start = g.lanes[b].geom.end_pose();
        let c = g.push(
            LaneGeom::Line {
                start: exit_start,
                length: exit,
            },
            0,
            0,
            LANE_WIDTH,
        );
        g.link(a, b);
        g.link(b, c);
        ego_chains.push(vec![a, b, c]);
    }
    GeneratedMap {
        graph: g,
        ego_chains,
    }
}

struct Corridor {
    approach: usize,
    cross: usize,
    exit: usize,
}

/// One directed corridor through the junction box: approach, crossing
/// segment, exit, chained by successor links.
fn corridor(g: &mut LaneGraph, start: Pose2, arm: f64) -> Corridor {
    let approach = g.push(
        LaneGeom::Line {
            start,
            length: arm - JUNCTION_HALF,
        },
        0,
        0,
        LANE_WIDTH,
    );
    let cross_start = g.lanes[approach].geom.end_pose();
    let cross = g.push(
        LaneGeom::Line {
            start: cross_start,
            length: 2.0 * JUNCTION_HALF,
        },
        1,
        0,
        LANE_WIDTH,
    );
    let exit_start = g.lanes[cross].geom.end_pose();
    let exit = g.push(
        LaneGeom::Line {
            start: exit_start,
            length: arm - JUNCTION_HALF,
        },
        0,
        0,
        LANE_WIDTH,
    );
    g.link(approach, cross);
    g.link(cross, exit);
    Corridor {
        approach,
        cross,
        exit,
    }
}

/// East-west main road plus a southern approach that must turn.
fn t_junction(rng: &mut ChaCha8Rng) -> GeneratedMap {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut g = LaneGraph::default();
    let arm = rng.gen_range(130.0..200.0);
    let south = rng.gen_range(90.0..150.0);

    // Main road: eastbound at y = -w/2, westbound at y = +w/2.
    let half = LANE_WIDTH / 2.0;
    let east = corridor(&mut g, Pose2::new(-arm, -half, 0.0), arm);
    let west = corridor(&mut g, Pose2::new(arm, half, PI), arm);

    // Southern approach, northbound on the right side of its road.
    let appr_x = half;
    let appr = g.push(
        LaneGeom::Line {
            start: Pose2::new(appr_x, -south, FRAC_PI_2),
            length: south - JUNCTION_HALF,
        },
        0,
        0,
        LANE_WIDTH,
    );
    let appr_end = g.lanes[appr].geom.end_pose();

    // Right turn onto the eastbound exit.
    let r_right = JUNCTION_HALF - half; // ends at (JUNCTION_HALF, -half)
    let right = g.push(
        LaneGeom::arc_from_start(appr_end, r_right, -FRAC_PI_2),
        1,
        0,
        LANE_WIDTH,
    );
    // Left turn onto the westbound exit.
    let r_left = JUNCTION_HALF + half;
    let left = g.push(LaneGeom::arc_from_start(appr_end, r_left, FRAC_PI_2), 1, 0, LANE_WIDTH);
    g.link(appr, right);
    g.link(appr, left);
    g.link(right, east.exit);
    g.link(left, west.exit);
    let _ = (east.approach, west.approach, east.cross, west.cross);

    GeneratedMap {
        graph: g,
        ego_chains: vec![vec![appr, right, east.exit], vec![appr, left, west.exit]],
    }
}

/// Two perpendicular roads with through and turn connections for the
/// northbound approach.
fn crossroad(rng: &mut ChaCha8Rng) -> GeneratedMap {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut g = LaneGraph::default();
    let arm = rng.gen_range(130.0..200.0);
    let half = LANE_WIDTH / 2.0;

    let east = corridor(&mut g, Pose2::new(-arm, -half, 0.0), arm);
    let west = corridor(&mut g, Pose2::new(arm, half, PI), arm);
    let north = corridor(&mut g, Pose2::new(half, -arm, FRAC_PI_2), arm);
    let south = corridor(&mut g, Pose2::new(-half, arm, -FRAC_PI_2), arm);
    let _ = south.exit;

    // Turns from the northbound approach.
    let appr_end = g.lanes[north.approach].geom.end_pose();
    let right = g.push(
        LaneGeom::arc_from_start(appr_end, JUNCTION_HALF - half, -FRAC_PI_2),
        1,
        0,
        LANE_WIDTH,
    );
    let left = g.push(
        LaneGeom::arc_from_start(appr_end, JUNCTION_HALF + half, FRAC_PI_2),
        1,
        0,
        LANE_WIDTH,
    );
    g.link(north.approach, right);
    g.link(north.approach, left);
    g.link(right, east.exit);
    g.link(left, west.exit);

    GeneratedMap {
        graph: g,
        ego_chains: vec![
            vec![north.approach, north.cross, north.exit],
            vec![north.approach, right, east.exit],
            vec![north.approach, left, west.exit],
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn deterministic_for_seed() {
        for layout in Layout::ALL {
            let a = generate_map(layout, &mut rng(7));
            let b = generate_map(layout, &mut rng(7));
            assert_eq!(a.graph.lanes.len(), b.graph.lanes.len());
            for (la, lb) in a.graph.lanes.iter().zip(&b.graph.lanes) {
                let pa = la.sample_centerline(0.5);
                let pb = lb.sample_centerline(0.5);
                assert_eq!(pa.len(), pb.len());
                for (x, y) in pa.iter().zip(&pb) {
                    assert_eq!((x.x, x.y, x.heading), (y.x, y.y, y.heading));
                }
            }
        }
    }

    #[test]
    fn continuity_and_curvature() {
        for layout in Layout::ALL {
            for seed in 0..5 {
                let m = generate_map(layout, &mut rng(seed));
                m.graph.check_continuity().unwrap();
                for lane in &m.graph.lanes {
                    assert!(
                        lane.geom.curvature().abs() <= 0.1 + 1e-12,
                        "{layout} lane {} curvature {}",
                        lane.id,
                        lane.geom.curvature()
                    );
                }
            }
        }
    }

    #[test]
    fn crossroad_heading_clusters() {
        let m = generate_map(Layout::Crossroad, &mut rng(3));
        assert!(m.graph.lanes.len() >= 4);
        let mut clusters: Vec<f64> = Vec::new();
        for lane in &m.graph.lanes {
            let h = lane.geom.start_pose().heading;
            if !clusters.iter().any(|c| {
                crate::scene::frame::wrap_angle(c - h).abs() < 0.3
            }) {
                clusters.push(h);
            }
        }
        assert!(clusters.len() >= 2, "found {} heading clusters", clusters.len());
    }

    #[test]
    fn curve_points_lie_on_arc() {
        let m = generate_map(Layout::Curve, &mut rng(11));
        for lane in &m.graph.lanes {
            if let LaneGeom::Arc { center, radius, .. } = lane.geom {
                for p in lane.sample_centerline(0.5) {
                    let r = ((p.x - center.0).powi(2) + (p.y - center.1).powi(2)).sqrt();
                    assert!((r - radius).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn lanes_long_enough_except_turn_fixtures() {
        for layout in Layout::ALL {
            let m = generate_map(layout, &mut rng(1));
            for lane in &m.graph.lanes {
                if lane.lane_type == 0 {
                    assert!(
                        lane.geom.length() >= 20.0,
                        "{layout} lane {} too short",
                        lane.id
                    );
                }
            }
        }
    }
}
