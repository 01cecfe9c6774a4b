//! Labeled scene assembly: simulate one scenario, anchor the ego frame at the
//! reference timestep, and emit a validated [`Scene`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::agents::{simulate, spawn_vehicles, SimFrame, SimVehicle};

use super::map::{generate_map, GeneratedMap};
use super::{mix_seed, Layout, ScenarioConfig};
use crate::error::{Error, Result};
use crate::scene::frame::{wrap_angle, EgoFrame, Pose2};
use crate::scene::pad::select_nearest_indices;
use crate::scene::route::derive_navigation_route;
use crate::scene::types::{
    agent_attr, lane_attr, route_attr, AgentFuture, AgentTrack, EgoState, MapLane,
    NavigationRoute, Scene,
};

/// Lanes and agents beyond this distance from the ego are dropped before
/// nearest-capacity selection.
pub const SEARCH_RADIUS: f64 = 200.0;
const EGO_WHEELBASE: f64 = 2.8;

/// Counters surfaced into the corpus manifest.
#[derive(Debug, Clone, Copy, Default)]
pub struct SceneStats {
    pub truncated_agents: u64,
    pub truncated_lanes: u64,
}

fn rng_for(config: &ScenarioConfig, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(mix_seed(config.seed, stream, config.layout as u64))
}

struct EgoPlan {
    chain_idx: usize,
    start_s: f64,
    speed: f64,
    /// Lane-change blend: (target chain, start frame, duration frames).
    blend: Option<(usize, usize, usize)>,
}

fn plan_ego(
    config: &ScenarioConfig,
    map: &GeneratedMap,
    chains: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<EgoPlan> {
    let t_h = config.dims.t_h as f64 * config.dims.dt;
    let horizon = (config.dims.t_h + 1 + config.dims.t_f) as f64 * config.dims.dt;
    let pick = rng.gen_range(0..map.ego_chains.len());
    let ego_chain = &map.ego_chains[pick];
    let chain_idx = chains
        .iter()
        .position(|c| c == ego_chain)
        .ok_or_else(|| Error::InvalidInput("ego chain not in graph chains".into()))?;
    let total = map.graph.chain_length(ego_chain);

    let mut speed = rng.gen_range(config.speed_min..=config.speed_max);
    let target_ref_s = match config.layout {
        Layout::TJunction | Layout::Crossroad => {
            // Hold the ego shortly before the junction box at the reference
            // frame so the maneuver happens in the future window.
            let approach_len = map.graph.lanes[ego_chain[0]].geom.length();
            speed = speed.min((approach_len - 5.0) / (t_h + 1.0)).max(1.5);
            (approach_len - speed * rng.gen_range(0.5..1.5)).max(6.0)
        }
        _ => {
            let max_ref = (total - 140.0).max(20.0);
            rng.gen_range((0.15 * max_ref).min(15.0)..=max_ref)
        }
    };
    let start_s = (target_ref_s - speed * t_h).max(2.0);
    // Keep the whole rollout on the road.
    let room = (total - start_s - 8.0).max(10.0);
    speed = speed.min(room / (horizon + 1.0)).max(1.0);

    let blend = if config.layout == Layout::LaneChange {
        // Straight maps order ego chains by lane; pick an adjacent one.
        let target = if pick + 1 < map.ego_chains.len() && (pick == 0 || rng.gen_bool(0.5)) {
            pick + 1
        } else {
            pick.saturating_sub(1)
        };
        if target == pick {
            None
        } else {
            let target_idx = chains
                .iter()
                .position(|c| c == &map.ego_chains[target])
                .ok_or_else(|| Error::InvalidInput("target chain missing".into()))?;
            let start = config.dims.t_h + rng.gen_range(5..15);
            let dur = rng.gen_range(20..30);
            Some((target_idx, start, dur))
        }
    } else {
        None
    };

    Ok(EgoPlan {
        chain_idx,
        start_s,
        speed,
        blend,
    })
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Central-difference derivatives over an observed window; one-sided at the
/// window edges. Returns (vx, vy) and (ax, ay) per frame.
fn finite_diff(
    xs: &[f64],
    ys: &[f64],
    observed: &[bool],
    dt: f64,
) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let n = xs.len();
    let first = observed.iter().position(|o| *o);
    let mut vel = vec![(0.0, 0.0); n];
    let mut acc = vec![(0.0, 0.0); n];
    let Some(first) = first else {
        return (vel, acc);
    };
    let last = n - 1;
    if first == last {
        return (vel, acc);
    }
    for t in first..=last {
        let (tm, tp) = (t.max(first + 1) - 1, (t + 1).min(last));
        let span = (tp - tm) as f64 * dt;
        vel[t] = ((xs[tp] - xs[tm]) / span, (ys[tp] - ys[tm]) / span);
    }
    for t in first..=last {
        let (tm, tp) = (t.max(first + 1) - 1, (t + 1).min(last));
        let span = (tp - tm) as f64 * dt / 2.0;
        acc[t] = (
            (vel[tp].0 - vel[tm].0) / (2.0 * span),
            (vel[tp].1 - vel[tm].1) / (2.0 * span),
        );
    }
    (vel, acc)
}

/// Generate one labeled scene. Fails with [`Error::RouteDerivation`] when the
/// ego future cannot be matched to the lane graph; callers regenerate with
/// the next sub-seed.
pub fn generate_scene(config: &ScenarioConfig) -> Result<(Scene, SceneStats)> {
    let dims = &config.dims;
    let t1 = dims.history_len();
    let n_frames = t1 + dims.t_f;
    let mut stats = SceneStats::default();

    let mut map_rng = rng_for(config, 1);
    let map = generate_map(config.layout, &mut map_rng);
    map.graph.check_continuity()?;
    let chains = map.graph.chains();

    let mut ego_rng = rng_for(config, 2);
    let plan = plan_ego(config, &map, &chains, &mut ego_rng)?;
    let ego_dims = (
        ego_rng.gen_range(4.6..5.0),
        ego_rng.gen_range(1.9..2.1),
        ego_rng.gen_range(1.5..1.7),
    );

    let (ego_spawn_pose, _) = map.graph.chain_pose_at(&chains[plan.chain_idx], plan.start_s);
    let mut spawn_rng = rng_for(config, 3);
    let mut vehicles = vec![SimVehicle {
        chain: plan.chain_idx,
        s: plan.start_s,
        v: plan.speed,
        desired_v: plan.speed,
        appear_at: 0,
        length: ego_dims.0,
        width: ego_dims.1,
        height: ego_dims.2,
    }];
    vehicles.extend(spawn_vehicles(
        &map.graph,
        &chains,
        config.n_agents,
        (config.speed_min, config.speed_max),
        config.short_history_frac,
        dims.t_h,
        &[(ego_spawn_pose.x, ego_spawn_pose.y)],
        &mut spawn_rng,
    ));

    let mut frames = simulate(&map.graph, &chains, &mut vehicles, n_frames, dims.dt);

    // Lane-change maneuver: blend the ego laterally onto the target lane.
    if let Some((target_idx, start, dur)) = plan.blend {
        let src_y = map.graph.lanes[chains[plan.chain_idx][0]].geom.start_pose().y;
        let dst_y = map.graph.lanes[chains[target_idx][0]].geom.start_pose().y;
        for t in start..n_frames {
            let alpha = smoothstep((t - start) as f64 / dur as f64);
            frames[0][t].pose.y += alpha * (dst_y - src_y);
        }
    }

    let ego_ref = frames[0][dims.t_h];
    let frame = EgoFrame::new(ego_ref.pose)?;

    // ----- agents -----
    let mut noise_rng = rng_for(config, 4);
    let normal = Normal::new(0.0, config.noise_sigma.max(1e-300)).unwrap();
    let agent_ids: Vec<usize> = (1..vehicles.len())
        .filter(|&i| {
            let p = frames[i][dims.t_h].pose;
            let (lx, ly) = frame.to_local(p.x, p.y);
            (lx * lx + ly * ly).sqrt() <= SEARCH_RADIUS
        })
        .collect();
    let dists: Vec<f64> = agent_ids
        .iter()
        .map(|&i| {
            let p = frames[i][dims.t_h].pose;
            let (lx, ly) = frame.to_local(p.x, p.y);
            (lx * lx + ly * ly).sqrt()
        })
        .collect();
    let kept = select_nearest_indices(&dists, dims.n_agents);
    stats.truncated_agents += (agent_ids.len() - kept.len()) as u64;

    let mut agents = vec![AgentTrack::empty(dims); dims.n_agents];
    let mut futures = vec![AgentFuture::empty(dims); dims.n_agents];
    for (slot, &ki) in kept.iter().enumerate() {
        let vi = agent_ids[ki];
        let veh = &vehicles[vi];
        let track = &frames[vi];

        // Noisy observed positions in the ego frame.
        let mut xs = vec![0.0f64; t1];
        let mut ys = vec![0.0f64; t1];
        let mut observed = vec![false; t1];
        for t in 0..t1 {
            observed[t] = track[t].observed;
            let (mut gx, mut gy) = (track[t].pose.x, track[t].pose.y);
            if config.noise_sigma > 0.0 && observed[t] {
                gx += normal.sample(&mut noise_rng);
                gy += normal.sample(&mut noise_rng);
            }
            let (lx, ly) = frame.to_local(gx, gy);
            xs[t] = lx;
            ys[t] = ly;
        }
        let (vel, acc) = finite_diff(&xs, &ys, &observed, dims.dt);

        // Headings from motion direction; fall back to the previous frame
        // (or the simulated heading) when nearly stationary.
        let mut headings = vec![0.0f64; t1];
        let mut prev_h = frame.heading_to_local(track[dims.t_h].pose.heading);
        for t in 0..t1 {
            if !observed[t] {
                continue;
            }
            let speed = (vel[t].0 * vel[t].0 + vel[t].1 * vel[t].1).sqrt();
            if speed > 0.5 {
                prev_h = vel[t].1.atan2(vel[t].0);
            } else if t == 0 || !observed[t - 1] {
                prev_h = frame.heading_to_local(track[t].pose.heading);
            }
            headings[t] = prev_h;
        }

        let cur = (xs[dims.t_h], ys[dims.t_h], headings[dims.t_h]);
        let a = &mut agents[slot];
        for t in 0..t1 {
            if !observed[t] {
                continue;
            }
            let (dx, dy) = (xs[t] - cur.0, ys[t] - cur.1);
            let (c, s) = (cur.2.cos(), cur.2.sin());
            a.frames[[t, agent_attr::X]] = xs[t] as f32;
            a.frames[[t, agent_attr::Y]] = ys[t] as f32;
            a.frames[[t, agent_attr::HEADING]] = wrap_angle(headings[t]) as f32;
            a.frames[[t, agent_attr::VX]] = vel[t].0 as f32;
            a.frames[[t, agent_attr::VY]] = vel[t].1 as f32;
            a.frames[[t, agent_attr::AX]] = acc[t].0 as f32;
            a.frames[[t, agent_attr::AY]] = acc[t].1 as f32;
            a.frames[[t, agent_attr::LOCAL_DX]] = (dx * c + dy * s) as f32;
            a.frames[[t, agent_attr::LOCAL_DY]] = (-dx * s + dy * c) as f32;
            a.frames[[t, agent_attr::LENGTH]] = veh.length as f32;
            a.frames[[t, agent_attr::WIDTH]] = veh.width as f32;
            a.frames[[t, agent_attr::HEIGHT]] = veh.height as f32;
            a.frames[[t, agent_attr::VALID]] = 1.0;
            a.valid[t] = true;
        }

        // Clean ground-truth future labels.
        let f = &mut futures[slot];
        for t in 0..dims.t_f {
            let p = track[t1 + t].pose;
            let (lx, ly) = frame.to_local(p.x, p.y);
            f.points[[t, 0]] = lx as f32;
            f.points[[t, 1]] = ly as f32;
            f.valid[t] = true;
        }
    }

    // ----- lanes -----
    struct LaneWindow {
        rows: Vec<[f64; lane_attr::DIM]>,
        centroid_dist: f64,
    }
    let mut windows: Vec<LaneWindow> = Vec::new();
    for lane in &map.graph.lanes {
        let pts = lane.sample_centerline(0.5);
        let local: Vec<Pose2> = pts.iter().map(|p| frame.pose_to_local(*p)).collect();
        let dist: Vec<f64> = local.iter().map(|p| (p.x * p.x + p.y * p.y).sqrt()).collect();
        let near = dist
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, d)| (i, *d))
            .unwrap();
        if near.1 > SEARCH_RADIUS {
            continue;
        }
        let start = near.0.saturating_sub(dims.p_m / 2).min(local.len().saturating_sub(dims.p_m));
        let end = (start + dims.p_m).min(local.len());
        let mut rows = Vec::with_capacity(end - start);
        let mut cx = 0.0;
        let mut cy = 0.0;
        for (k, p) in local[start..end].iter().enumerate() {
            rows.push([
                p.x,
                p.y,
                p.heading,
                k as f64 * 0.5,
                lane.lane_type as f64,
                lane.color as f64,
                lane.width / 2.0,
                lane.width / 2.0,
            ]);
            cx += p.x;
            cy += p.y;
        }
        let n = rows.len() as f64;
        windows.push(LaneWindow {
            rows,
            centroid_dist: ((cx / n).powi(2) + (cy / n).powi(2)).sqrt(),
        });
    }
    let lane_dists: Vec<f64> = windows.iter().map(|w| w.centroid_dist).collect();
    let kept_lanes = select_nearest_indices(&lane_dists, dims.n_lanes);
    stats.truncated_lanes += (windows.len() - kept_lanes.len()) as u64;
    let mut lanes = vec![MapLane::empty(dims); dims.n_lanes];
    for (slot, &wi) in kept_lanes.iter().enumerate() {
        let l = &mut lanes[slot];
        for (p, row) in windows[wi].rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                l.points[[p, j]] = *v as f32;
            }
            l.valid[p] = true;
        }
    }

    // ----- navigation route -----
    let future_global: Vec<(f64, f64)> = (t1..n_frames)
        .map(|t| (frames[0][t].pose.x, frames[0][t].pose.y))
        .collect();
    let route_pts = derive_navigation_route(
        &future_global,
        &map.graph.route_lanes(0.5),
        (ego_ref.pose.x, ego_ref.pose.y),
        dims.route_spacing,
        dims.p_r,
    )?;
    let mut route = NavigationRoute::empty(dims);
    for (p, pt) in route_pts.iter().enumerate() {
        let local = frame.pose_to_local(Pose2::new(pt.x, pt.y, pt.heading));
        route.points[[p, route_attr::X]] = local.x as f32;
        route.points[[p, route_attr::Y]] = local.y as f32;
        route.points[[p, route_attr::HEADING]] = local.heading as f32;
        route.valid[p] = true;
    }

    // ----- ego history, state, and labels -----
    let mut ego_history = ndarray::Array2::<f32>::zeros((t1, agent_attr::DIM));
    for t in 0..t1 {
        let sf: &SimFrame = &frames[0][t];
        let local = frame.pose_to_local(sf.pose);
        let (vx, vy) = frame.vec_to_local(
            sf.v * sf.pose.heading.cos(),
            sf.v * sf.pose.heading.sin(),
        );
        let (tan_x, tan_y) = (sf.pose.heading.cos(), sf.pose.heading.sin());
        let a_gx = sf.accel * tan_x - sf.v * sf.v * sf.curvature * tan_y;
        let a_gy = sf.accel * tan_y + sf.v * sf.v * sf.curvature * tan_x;
        let (ax, ay) = frame.vec_to_local(a_gx, a_gy);
        ego_history[[t, agent_attr::X]] = local.x as f32;
        ego_history[[t, agent_attr::Y]] = local.y as f32;
        ego_history[[t, agent_attr::HEADING]] = local.heading as f32;
        ego_history[[t, agent_attr::VX]] = vx as f32;
        ego_history[[t, agent_attr::VY]] = vy as f32;
        ego_history[[t, agent_attr::AX]] = ax as f32;
        ego_history[[t, agent_attr::AY]] = ay as f32;
        ego_history[[t, agent_attr::LOCAL_DX]] = local.x as f32;
        ego_history[[t, agent_attr::LOCAL_DY]] = local.y as f32;
        ego_history[[t, agent_attr::LENGTH]] = ego_dims.0 as f32;
        ego_history[[t, agent_attr::WIDTH]] = ego_dims.1 as f32;
        ego_history[[t, agent_attr::HEIGHT]] = ego_dims.2 as f32;
        ego_history[[t, agent_attr::VALID]] = 1.0;
    }

    let ego = EgoState {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
        vx: ego_ref.v as f32,
        vy: 0.0,
        ax: ego_ref.accel as f32,
        ay: (ego_ref.v * ego_ref.v * ego_ref.curvature) as f32,
        steer: (EGO_WHEELBASE * ego_ref.curvature).atan() as f32,
        length: ego_dims.0 as f32,
        width: ego_dims.1 as f32,
        height: ego_dims.2 as f32,
    };

    let mut ego_future = ndarray::Array2::<f32>::zeros((dims.t_f, 2));
    for t in 0..dims.t_f {
        let p = frames[0][t1 + t].pose;
        let (lx, ly) = frame.to_local(p.x, p.y);
        ego_future[[t, 0]] = lx as f32;
        ego_future[[t, 1]] = ly as f32;
    }

    let scene = Scene {
        ego,
        agents,
        lanes,
        route,
        ego_history,
        ego_future,
        agent_futures: futures,
    };
    scene.validate(dims)?;
    Ok((scene, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(layout: Layout, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            layout,
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn straight_future_heading_near_zero() {
        let (scene, _) = generate_scene(&config(Layout::Straight, 7)).unwrap();
        let f = &scene.ego_future;
        for t in 1..f.nrows() {
            let dx = (f[[t, 0]] - f[[t - 1, 0]]) as f64;
            let dy = (f[[t, 1]] - f[[t - 1, 1]]) as f64;
            if (dx * dx + dy * dy).sqrt() > 0.05 {
                assert!(dy.atan2(dx).abs() < 1e-3, "step {t}: {}", dy.atan2(dx));
            }
        }
    }

    #[test]
    fn ego_anchored_at_origin() {
        for layout in Layout::ALL {
            let (scene, _) = generate_scene(&config(layout, 3)).unwrap();
            assert_eq!(scene.ego.x, 0.0);
            assert_eq!(scene.ego.y, 0.0);
            assert_eq!(scene.ego.heading, 0.0);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (a, _) = generate_scene(&config(Layout::Crossroad, 11)).unwrap();
        let (b, _) = generate_scene(&config(Layout::Crossroad, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn t_junction_route_turns() {
        // The southern approach terminates, so every ego plan turns: the
        // route heading must swing by about +-pi/2 across the junction.
        for seed in 0..4 {
            let (scene, _) = generate_scene(&config(Layout::TJunction, seed)).unwrap();
            let n = scene.route.valid_count();
            assert!(n >= 10);
            let h0 = scene.route.points[[0, route_attr::HEADING]] as f64;
            let h1 = scene.route.points[[n - 1, route_attr::HEADING]] as f64;
            let turn = wrap_angle(h1 - h0).abs();
            assert!(
                (turn - std::f64::consts::FRAC_PI_2).abs() < 0.15,
                "seed {seed}: turn {turn}"
            );
        }
    }

    #[test]
    fn kinematic_consistency_central_diff() {
        let (scene, _) = generate_scene(&config(Layout::Curve, 5)).unwrap();
        let dt = 0.1;
        for a in scene.agents.iter().filter(|a| a.any_valid()) {
            let first = a.valid.iter().position(|v| *v).unwrap();
            let last = a.valid.iter().rposition(|v| *v).unwrap();
            for t in (first + 1)..last {
                let fd_vx =
                    (a.frames[[t + 1, agent_attr::X]] - a.frames[[t - 1, agent_attr::X]]) as f64
                        / (2.0 * dt);
                let fd_vy =
                    (a.frames[[t + 1, agent_attr::Y]] - a.frames[[t - 1, agent_attr::Y]]) as f64
                        / (2.0 * dt);
                assert!((fd_vx - a.frames[[t, agent_attr::VX]] as f64).abs() < 0.1);
                assert!((fd_vy - a.frames[[t, agent_attr::VY]] as f64).abs() < 0.1);
            }
        }
    }

    #[test]
    fn noisy_scenes_stay_consistent() {
        let mut c = config(Layout::Straight, 13);
        c.noise_sigma = 0.1;
        let (scene, _) = generate_scene(&c).unwrap();
        // Central-difference consistency holds by construction with noise.
        let dt = 0.1;
        let a = scene.agents.iter().find(|a| a.valid.iter().all(|v| *v)).unwrap();
        for t in 1..a.valid.len() - 1 {
            let fd_vx = (a.frames[[t + 1, agent_attr::X]] - a.frames[[t - 1, agent_attr::X]])
                as f64
                / (2.0 * dt);
            assert!((fd_vx - a.frames[[t, agent_attr::VX]] as f64).abs() < 0.1);
        }
    }

    #[test]
    fn route_begins_near_origin() {
        for layout in Layout::ALL {
            let (scene, _) = generate_scene(&config(layout, 21)).unwrap();
            let x = scene.route.points[[0, 0]] as f64;
            let y = scene.route.points[[0, 1]] as f64;
            assert!((x * x + y * y).sqrt() <= 5.0);
        }
    }
}
