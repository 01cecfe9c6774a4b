//! Lane-following traffic simulation with IDM-style longitudinal control.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::lane_graph::LaneGraph;
use crate::scene::frame::Pose2;

/// Hard acceleration bound, m/s^2.
pub const ACCEL_LIMIT: f64 = 3.0;
/// Minimum euclidean gap between spawned vehicles.
pub const SPAWN_GAP: f64 = 5.0;

const IDM_ACCEL: f64 = 2.0;
const IDM_BRAKE: f64 = 2.5;
const IDM_MIN_GAP: f64 = 2.0;
const IDM_HEADWAY: f64 = 1.5;

/// One simulated vehicle on a lane chain.
#[derive(Debug, Clone)]
pub struct SimVehicle {
    pub chain: usize,
    pub s: f64,
    pub v: f64,
    pub desired_v: f64,
    /// First frame at which the vehicle is observed.
    pub appear_at: usize,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

/// Per-frame kinematic state in the global frame.
#[derive(Debug, Clone, Copy)]
pub struct SimFrame {
    pub pose: Pose2,
    pub v: f64,
    pub accel: f64,
    pub curvature: f64,
    pub observed: bool,
}

/// Pose along a chain, extrapolating straight past the chain end so vehicles
/// that run out of road keep consistent kinematics.
fn chain_pose(graph: &LaneGraph, chain: &[usize], s: f64) -> (Pose2, f64) {
    let total = graph.chain_length(chain);
    if s <= total {
        graph.chain_pose_at(chain, s)
    } else {
        let (end, _) = graph.chain_pose_at(chain, total);
        let extra = s - total;
        (
            Pose2::new(
                end.x + extra * end.heading.cos(),
                end.y + extra * end.heading.sin(),
                end.heading,
            ),
            0.0,
        )
    }
}

fn idm_accel(v: f64, desired_v: f64, gap: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (v / desired_v.max(0.1)).powi(4);
    let interaction = match gap {
        Some((gap, lead_v)) if gap > 0.1 => {
            let dv = v - lead_v;
            let s_star =
                IDM_MIN_GAP + v * IDM_HEADWAY + v * dv / (2.0 * (IDM_ACCEL * IDM_BRAKE).sqrt());
            (s_star.max(0.0) / gap).powi(2)
        }
        Some(_) => 4.0, // bumper to bumper: brake hard
        None => 0.0,
    };
    (IDM_ACCEL * (free - interaction)).clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
}

/// Simulate all vehicles over `n_frames` at `dt`. Vehicles interact only with
/// the nearest leader on their own chain. Returns one frame list per vehicle,
/// in input order.
pub fn simulate(
    graph: &LaneGraph,
    chains: &[Vec<usize>],
    vehicles: &mut [SimVehicle],
    n_frames: usize,
    dt: f64,
) -> Vec<Vec<SimFrame>> {
    let mut out: Vec<Vec<SimFrame>> = vec![Vec::with_capacity(n_frames); vehicles.len()];
    for frame in 0..n_frames {
        // Record, then integrate.
        for (i, veh) in vehicles.iter().enumerate() {
            let (pose, curvature) = chain_pose(graph, &chains[veh.chain], veh.s);
            out[i].push(SimFrame {
                pose,
                v: veh.v,
                accel: 0.0, // filled below once computed
                curvature,
                observed: frame >= veh.appear_at,
            });
        }
        let states: Vec<(usize, f64, f64, f64)> = vehicles
            .iter()
            .map(|v| (v.chain, v.s, v.v, v.length))
            .collect();
        for (i, veh) in vehicles.iter_mut().enumerate() {
            let lead = states
                .iter()
                .enumerate()
                .filter(|(j, st)| *j != i && st.0 == veh.chain && st.1 > veh.s)
                .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap());
            let gap = lead.map(|(_, st)| {
                (
                    st.1 - veh.s - 0.5 * (st.3 + veh.length),
                    st.2,
                )
            });
            let a = idm_accel(veh.v, veh.desired_v, gap);
            out[i][frame].accel = a;
            veh.v = (veh.v + a * dt).max(0.0);
            veh.s += veh.v * dt;
        }
    }
    out
}

/// Place `count` vehicles on random chains with at least [`SPAWN_GAP`] of
/// euclidean separation at spawn time. Placement failures after bounded
/// retries yield fewer vehicles.
#[allow(clippy::too_many_arguments)]
pub fn spawn_vehicles(
    graph: &LaneGraph,
    chains: &[Vec<usize>],
    count: usize,
    speed_range: (f64, f64),
    short_history_frac: f64,
    t_h: usize,
    taken: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
) -> Vec<SimVehicle> {
    let mut placed: Vec<(f64, f64)> = taken.to_vec();
    let mut out = Vec::new();
    for _ in 0..count {
        let mut ok = None;
        for _try in 0..20 {
            let chain = rng.gen_range(0..chains.len());
            let total = graph.chain_length(&chains[chain]);
            if total < 40.0 {
                continue;
            }
            let s = rng.gen_range(5.0..total - 20.0);
            let (pose, _) = chain_pose(graph, &chains[chain], s);
            if placed
                .iter()
                .all(|p| ((p.0 - pose.x).powi(2) + (p.1 - pose.y).powi(2)).sqrt() >= SPAWN_GAP)
            {
                ok = Some((chain, s, pose));
                break;
            }
        }
        let Some((chain, s, pose)) = ok else { continue };
        placed.push((pose.x, pose.y));
        let desired_v = rng.gen_range(speed_range.0..=speed_range.1);
        let appear_at = if rng.gen_bool(short_history_frac) {
            rng.gen_range(1..=t_h.saturating_sub(5).max(1))
        } else {
            0
        };
        out.push(SimVehicle {
            chain,
            s,
            v: desired_v * rng.gen_range(0.8..1.0),
            desired_v,
            appear_at,
            length: rng.gen_range(4.2..5.2),
            width: rng.gen_range(1.8..2.1),
            height: rng.gen_range(1.4..1.8),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::lane_graph::LaneGeom;
    use rand::SeedableRng;

    fn line_graph(len: f64) -> (LaneGraph, Vec<Vec<usize>>) {
        let mut g = LaneGraph::default();
        let id = g.push(
            LaneGeom::Line {
                start: Pose2::new(0.0, 0.0, 0.0),
                length: len,
            },
            0,
            0,
            3.5,
        );
        (g, vec![vec![id]])
    }

    #[test]
    fn constant_speed_displacement() {
        // Desired speed equal to current speed on a free straight lane:
        // per-frame displacement of 0.5 m at 5 m/s and dt = 0.1.
        let (g, chains) = line_graph(400.0);
        let mut veh = vec![SimVehicle {
            chain: 0,
            s: 10.0,
            v: 5.0,
            desired_v: 5.0,
            appear_at: 0,
            length: 4.5,
            width: 1.9,
            height: 1.5,
        }];
        let frames = simulate(&g, &chains, &mut veh, 91, 0.1);
        for w in frames[0].windows(2) {
            let d = w[1].pose.x - w[0].pose.x;
            // IDM free term vanishes at v == v0, so speed is held.
            assert!((d - 0.5).abs() < 1e-6, "step {d}");
        }
    }

    #[test]
    fn follower_keeps_gap_and_accel_bounded() {
        let (g, chains) = line_graph(500.0);
        let mut veh = vec![
            SimVehicle {
                chain: 0,
                s: 40.0,
                v: 3.0,
                desired_v: 3.0,
                appear_at: 0,
                length: 4.5,
                width: 1.9,
                height: 1.5,
            },
            SimVehicle {
                chain: 0,
                s: 10.0,
                v: 12.0,
                desired_v: 14.0,
                appear_at: 0,
                length: 4.5,
                width: 1.9,
                height: 1.5,
            },
        ];
        let frames = simulate(&g, &chains, &mut veh, 200, 0.1);
        for f in &frames[1] {
            assert!(f.accel.abs() <= ACCEL_LIMIT + 1e-12);
        }
        // The follower never passes through the leader.
        for (lead, follow) in frames[0].iter().zip(&frames[1]) {
            assert!(follow.pose.x < lead.pose.x);
        }
    }

    #[test]
    fn spawn_respects_gap_and_determinism() {
        let (g, chains) = line_graph(300.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = spawn_vehicles(&g, &chains, 10, (3.0, 10.0), 0.5, 40, &[], &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = spawn_vehicles(&g, &chains, 10, (3.0, 10.0), 0.5, 40, &[], &mut rng);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.s, y.s);
            assert_eq!(x.desired_v, y.desired_v);
        }
        for i in 0..a.len() {
            for j in 0..i {
                assert!((a[i].s - a[j].s).abs() >= SPAWN_GAP);
            }
        }
        // Roughly half the agents have truncated histories.
        let short = a.iter().filter(|v| v.appear_at > 0).count();
        assert!(short >= 2 && short <= a.len() - 1, "{short} of {}", a.len());
    }
}
