//! Procedural lane-graph substrate for the scenario generator.
//!
//! Lanes are analytic primitives (straight segments and circular arcs) with
//! successor links, so centerline points, headings, and curvature are exact.

use crate::error::{Error, Result};
use crate::scene::frame::{wrap_angle, Pose2};

#[derive(Debug, Clone, Copy)]
pub enum LaneGeom {
    Line {
        start: Pose2,
        length: f64,
    },
    /// Circular arc; positive sweep turns left.
    Arc {
        center: (f64, f64),
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl LaneGeom {
    /// Arc starting at `start` turning by `sweep` radians with given radius.
    pub fn arc_from_start(start: Pose2, radius: f64, sweep: f64) -> LaneGeom {
        let side = sweep.signum();
        let center = (
            start.x - radius * side * start.heading.sin(),
            start.y + radius * side * start.heading.cos(),
        );
        let start_angle = (start.y - center.1).atan2(start.x - center.0);
        LaneGeom::Arc {
            center,
            radius,
            start_angle,
            sweep,
        }
    }

    pub fn length(&self) -> f64 {
        match self {
            LaneGeom::Line { length, .. } => *length,
            LaneGeom::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn curvature(&self) -> f64 {
        match self {
            LaneGeom::Line { .. } => 0.0,
            LaneGeom::Arc { radius, sweep, .. } => sweep.signum() / radius,
        }
    }

    /// Pose at arc length `s` from the lane start.
    pub fn pose_at(&self, s: f64) -> Pose2 {
        match self {
            LaneGeom::Line { start, .. } => Pose2::new(
                start.x + s * start.heading.cos(),
                start.y + s * start.heading.sin(),
                start.heading,
            ),
            LaneGeom::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let a = start_angle + sweep.signum() * s / radius;
                Pose2::new(
                    center.0 + radius * a.cos(),
                    center.1 + radius * a.sin(),
                    wrap_angle(a + sweep.signum() * std::f64::consts::FRAC_PI_2),
                )
            }
        }
    }

    pub fn start_pose(&self) -> Pose2 {
        self.pose_at(0.0)
    }

    pub fn end_pose(&self) -> Pose2 {
        self.pose_at(self.length())
    }
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: usize,
    pub geom: LaneGeom,
    pub lane_type: u8,
    pub color: u8,
    pub width: f64,
    pub successors: Vec<usize>,
}

impl Lane {
    /// Centerline sampled at exact multiples of `step`, endpoint included
    /// when the length is a multiple of `step`.
    pub fn sample_centerline(&self, step: f64) -> Vec<Pose2> {
        let len = self.geom.length();
        let n = (len / step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.geom.pose_at(k as f64 * step)).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LaneGraph {
    pub lanes: Vec<Lane>,
}

impl LaneGraph {
    pub fn push(&mut self, geom: LaneGeom, lane_type: u8, color: u8, width: f64) -> usize {
        let id = self.lanes.len();
        self.lanes.push(Lane {
            id,
            geom,
            lane_type,
            color,
            width,
            successors: Vec::new(),
        });
        id
    }

    pub fn link(&mut self, from: usize, to: usize) {
        if !self.lanes[from].successors.contains(&to) {
            self.lanes[from].successors.push(to);
        }
    }

    /// Successor continuity: the end pose of a lane must equal the start pose
    /// of each successor within 1e-6.
    pub fn check_continuity(&self) -> Result<()> {
        for lane in &self.lanes {
            let end = lane.geom.end_pose();
            for &s in &lane.successors {
                let start = self.lanes[s].geom.start_pose();
                let dp = ((end.x - start.x).powi(2) + (end.y - start.y).powi(2)).sqrt();
                let dh = wrap_angle(end.heading - start.heading).abs();
                if dp > 1e-6 || dh > 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "lane {} -> {} discontinuity (dp={dp:.2e}, dh={dh:.2e})",
                        lane.id, s
                    )));
                }
            }
        }
        Ok(())
    }

    /// All maximal successor paths, each starting from a lane without
    /// predecessors. Branches enumerate every successor choice.
    pub fn chains(&self) -> Vec<Vec<usize>> {
        let mut has_pred = vec![false; self.lanes.len()];
        for lane in &self.lanes {
            for &s in &lane.successors {
                has_pred[s] = true;
            }
        }
        let mut out = Vec::new();
        for lane in &self.lanes {
            if !has_pred[lane.id] {
                let mut stack = vec![vec![lane.id]];
                while let Some(path) = stack.pop() {
                    let last = *path.last().unwrap();
                    let next: Vec<usize> = self.lanes[last]
                        .successors
                        .iter()
                        .filter(|s| !path.contains(s))
                        .copied()
                        .collect();
                    if next.is_empty() {
                        out.push(path);
                    } else {
                        for s in next {
                            let mut p = path.clone();
                            p.push(s);
                            stack.push(p);
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }

    pub fn chain_length(&self, chain: &[usize]) -> f64 {
        chain.iter().map(|&i| self.lanes[i].geom.length()).sum()
    }

    /// Pose at arc length `s` along a chain; clamps at the chain end.
    pub fn chain_pose_at(&self, chain: &[usize], s: f64) -> (Pose2, f64) {
        let mut rem = s.max(0.0);
        for (k, &id) in chain.iter().enumerate() {
            let len = self.lanes[id].geom.length();
            if rem <= len || k + 1 == chain.len() {
                let local = rem.min(len);
                return (self.lanes[id].geom.pose_at(local), self.lanes[id].geom.curvature());
            }
            rem -= len;
        }
        unreachable!("empty chain");
    }

    /// Route-derivation view: finely sampled centerlines plus links.
    pub fn route_lanes(&self, step: f64) -> Vec<crate::scene::route::RouteLane> {
        self.lanes
            .iter()
            .map(|l| crate::scene::route::RouteLane {
                id: l.id,
                centerline: l
                    .sample_centerline(step)
                    .into_iter()
                    .map(|p| (p.x, p.y))
                    .collect(),
                successors: l.successors.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn arc_from_start_is_continuous() {
        let start = Pose2::new(3.0, -2.0, 0.4);
        let g = LaneGeom::arc_from_start(start, 20.0, FRAC_PI_2);
        let p0 = g.pose_at(0.0);
        assert_abs_diff_eq!(p0.x, start.x, epsilon = 1e-12);
        assert_abs_diff_eq!(p0.y, start.y, epsilon = 1e-12);
        assert_abs_diff_eq!(p0.heading, start.heading, epsilon = 1e-12);
        let end = g.end_pose();
        assert_abs_diff_eq!(end.heading, wrap_angle(start.heading + FRAC_PI_2), epsilon = 1e-12);
        assert_abs_diff_eq!(g.length(), 20.0 * FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn right_turn_is_negative_sweep() {
        let g = LaneGeom::arc_from_start(Pose2::new(0.0, 0.0, 0.0), 10.0, -FRAC_PI_2);
        let end = g.end_pose();
        assert!(end.y < 0.0);
        assert_abs_diff_eq!(end.heading, -FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(g.curvature(), -0.1, epsilon = 1e-12);
    }

    #[test]
    fn chains_follow_successors() {
        let mut g = LaneGraph::default();
        let a = g.push(
            LaneGeom::Line {
                start: Pose2::new(0.0, 0.0, 0.0),
                length: 50.0,
            },
            0,
            0,
            3.5,
        );
        let b = g.push(
            LaneGeom::Line {
                start: Pose2::new(50.0, 0.0, 0.0),
                length: 50.0,
            },
            0,
            0,
            3.5,
        );
        g.link(a, b);
        g.check_continuity().unwrap();
        assert_eq!(g.chains(), vec![vec![a, b]]);
        let (pose, k) = g.chain_pose_at(&[a, b], 75.0);
        assert_abs_diff_eq!(pose.x, 75.0, epsilon = 1e-12);
        assert_eq!(k, 0.0);
    }
}
