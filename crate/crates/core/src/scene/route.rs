//! Navigation-route derivation: backtrack the ego's future trajectory onto
//! lane centerlines, then extend forward along successors.

use super::polyline::{resample_polyline, SamplePoint};
use crate::error::{Error, Result};

/// Maximum distance from a future point to its matching lane centerline.
pub const ROUTE_MATCH_RADIUS: f64 = 3.0;
/// Forward extension limit in meters.
pub const ROUTE_MAX_LENGTH: f64 = 1500.0;

/// A lane as seen by route derivation: a finely sampled global centerline
/// plus successor links.
#[derive(Debug, Clone)]
pub struct RouteLane {
    pub id: usize,
    pub centerline: Vec<(f64, f64)>,
    pub successors: Vec<usize>,
}

impl RouteLane {
    fn cumulative(&self) -> Vec<f64> {
        let mut cum = Vec::with_capacity(self.centerline.len());
        cum.push(0.0);
        for w in self.centerline.windows(2) {
            let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            cum.push(cum.last().unwrap() + d);
        }
        cum
    }

    fn length(&self) -> f64 {
        *self.cumulative().last().unwrap()
    }

    /// Sub-polyline between arc lengths `s0` and `s1` with interpolated ends.
    fn slice(&self, s0: f64, s1: f64) -> Vec<(f64, f64)> {
        let cum = self.cumulative();
        let total = *cum.last().unwrap();
        let (s0, s1) = (s0.clamp(0.0, total), s1.clamp(0.0, total));
        if s1 <= s0 + 1e-9 {
            return Vec::new();
        }
        let at = |s: f64| -> (f64, f64) {
            let i = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
                Ok(i) => i.min(self.centerline.len() - 2),
                Err(i) => i.saturating_sub(1).min(self.centerline.len() - 2),
            };
            let seg = (cum[i + 1] - cum[i]).max(1e-12);
            let t = ((s - cum[i]) / seg).clamp(0.0, 1.0);
            let (a, b) = (self.centerline[i], self.centerline[i + 1]);
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        };
        let mut out = vec![at(s0)];
        for (i, &p) in self.centerline.iter().enumerate() {
            if cum[i] > s0 + 1e-9 && cum[i] < s1 - 1e-9 {
                out.push(p);
            }
        }
        out.push(at(s1));
        out
    }

    /// Nearest point on the centerline: (distance, arc length at projection).
    fn project(&self, p: (f64, f64)) -> (f64, f64) {
        let cum = self.cumulative();
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.centerline.windows(2).enumerate() {
            let (abx, aby) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            let len2 = abx * abx + aby * aby;
            let t = if len2 > 0.0 {
                (((p.0 - w[0].0) * abx + (p.1 - w[0].1) * aby) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let dx = p.0 - w[0].0 - t * abx;
            let dy = p.1 - w[0].1 - t * aby;
            let d2 = dx * dx + dy * dy;
            if d2 < best.0 {
                best = (d2, cum[i] + t * len2.sqrt());
            }
        }
        (best.0.sqrt(), best.1)
    }

    fn heading_at_start(&self) -> f64 {
        let a = self.centerline[0];
        let b = self.centerline[1];
        (b.1 - a.1).atan2(b.0 - a.0)
    }

    fn heading_at_end(&self) -> f64 {
        let n = self.centerline.len();
        let a = self.centerline[n - 2];
        let b = self.centerline[n - 1];
        (b.1 - a.1).atan2(b.0 - a.0)
    }
}

struct Stretch {
    lane: usize,
    s_first: f64,
    s_last: f64,
}

/// Derive the navigation route in the global frame.
///
/// The route starts at the projection of `ego_pos` onto the first traversed
/// lane and follows the lanes matched by the ego future. Consecutive lanes
/// joined by a successor link are concatenated end-to-start; a switch to a
/// non-successor lane (a lane change) cuts the current lane at the last
/// matched point and re-enters the next lane at its first matched point.
/// Past the future's end the route extends along successors
/// (straightest-first) up to `ROUTE_MAX_LENGTH` meters or `max_points`
/// resampled points.
pub fn derive_navigation_route(
    ego_future: &[(f64, f64)],
    lanes: &[RouteLane],
    ego_pos: (f64, f64),
    spacing: f64,
    max_points: usize,
) -> Result<Vec<SamplePoint>> {
    if ego_future.len() < 2 {
        return Err(Error::RouteDerivation("ego future has < 2 points".into()));
    }
    if lanes.is_empty() {
        return Err(Error::RouteDerivation("empty lane graph".into()));
    }
    let by_id: std::collections::BTreeMap<usize, &RouteLane> =
        lanes.iter().map(|l| (l.id, l)).collect();

    // Match every future point to its nearest lane.
    let mut stretches: Vec<Stretch> = Vec::new();
    for (i, &p) in ego_future.iter().enumerate() {
        let mut best = (f64::INFINITY, usize::MAX, 0.0);
        for lane in lanes {
            let (d, s) = lane.project(p);
            if d < best.0 {
                best = (d, lane.id, s);
            }
        }
        if best.0 > ROUTE_MATCH_RADIUS {
            return Err(Error::RouteDerivation(format!(
                "future point {i} is {:.2} m from the nearest lane",
                best.0
            )));
        }
        match stretches.last_mut() {
            Some(st) if st.lane == best.1 => st.s_last = best.2,
            _ => stretches.push(Stretch {
                lane: best.1,
                s_first: best.2,
                s_last: best.2,
            }),
        }
    }

    // Assemble the polyline stretch by stretch.
    let (_, s_ego) = by_id[&stretches[0].lane].project(ego_pos);
    let mut poly: Vec<(f64, f64)> = Vec::new();
    let mut enter_s = s_ego;
    for k in 0..stretches.len() {
        let cur = by_id[&stretches[k].lane];
        if let Some(next) = stretches.get(k + 1) {
            if cur.successors.contains(&next.lane) {
                poly.extend(cur.slice(enter_s, cur.length()));
                enter_s = 0.0;
            } else {
                // Lane change onto a parallel neighbor.
                poly.extend(cur.slice(enter_s, stretches[k].s_last));
                enter_s = next.s_first;
            }
        } else {
            poly.extend(cur.slice(enter_s, cur.length()));
        }
    }

    // Extend forward along successors, preferring the straightest one.
    let mut visited: std::collections::BTreeSet<usize> =
        stretches.iter().map(|s| s.lane).collect();
    let mut cursor = stretches.last().unwrap().lane;
    let mut total = super::polyline::arc_length(&poly);
    while total < ROUTE_MAX_LENGTH + spacing {
        let cur = by_id[&cursor];
        let end_h = cur.heading_at_end();
        let next = cur
            .successors
            .iter()
            .filter(|id| by_id.contains_key(id) && !visited.contains(id))
            .min_by(|&&a, &&b| {
                let da = crate::scene::frame::wrap_angle(by_id[&a].heading_at_start() - end_h).abs();
                let db = crate::scene::frame::wrap_angle(by_id[&b].heading_at_start() - end_h).abs();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .copied();
        match next {
            Some(id) => {
                visited.insert(id);
                let lane = by_id[&id];
                poly.extend(lane.slice(0.0, lane.length()));
                total += lane.length();
                cursor = id;
            }
            None => break,
        }
    }

    // Drop consecutive duplicates so resampling sees strictly positive segments.
    poly.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
    if poly.len() < 2 {
        return Err(Error::RouteDerivation("degenerate route polyline".into()));
    }

    let mut pts = resample_polyline(&poly, spacing)?;
    let limit = ((ROUTE_MAX_LENGTH / spacing).floor() as usize + 1).min(max_points);
    pts.truncate(limit);
    Ok(pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_lane(id: usize, x0: f64, x1: f64, y: f64, successors: Vec<usize>) -> RouteLane {
        let n = ((x1 - x0).abs() / 1.0).ceil() as usize;
        RouteLane {
            id,
            centerline: (0..=n)
                .map(|i| (x0 + (x1 - x0) * i as f64 / n as f64, y))
                .collect(),
            successors,
        }
    }

    #[test]
    fn single_lane_prefix() {
        let lanes = vec![straight_lane(0, -20.0, 100.0, 0.0, vec![])];
        let future: Vec<(f64, f64)> = (1..=50).map(|i| (0.3 * i as f64, 0.0)).collect();
        let route = derive_navigation_route(&future, &lanes, (0.0, 0.0), 3.0, 500).unwrap();
        // Starts at the ego projection, follows the lane eastwards.
        assert!(route[0].x.abs() < 1e-9 && route[0].y.abs() < 1e-9);
        for (i, p) in route.iter().enumerate() {
            assert!((p.x - 3.0 * i as f64).abs() < 1e-9);
            assert!(p.y.abs() < 1e-9);
            assert!(p.heading.abs() < 1e-9);
        }
        assert_eq!(route.len(), 34); // 100 m of road ahead -> floor(100/3)+1
    }

    #[test]
    fn concatenates_successor() {
        let lanes = vec![
            straight_lane(0, -20.0, 30.0, 0.0, vec![1]),
            straight_lane(1, 30.0, 90.0, 0.0, vec![]),
        ];
        // Future crosses from lane 0 into lane 1.
        let future: Vec<(f64, f64)> = (1..=50).map(|i| (i as f64, 0.0)).collect();
        let route = derive_navigation_route(&future, &lanes, (0.0, 0.0), 3.0, 500).unwrap();
        let xs: Vec<f64> = route.iter().map(|p| p.x).collect();
        // Continuous 3 m spacing across the lane boundary.
        for w in xs.windows(2) {
            assert!((w[1] - w[0] - 3.0).abs() < 1e-9);
        }
        assert!(*xs.last().unwrap() > 80.0);
    }

    #[test]
    fn lane_change_switches_centerlines() {
        let lanes = vec![
            straight_lane(0, -20.0, 120.0, 0.0, vec![]),
            straight_lane(1, -20.0, 120.0, 3.5, vec![]),
        ];
        // Future starts on lane 0, blends onto lane 1 at x in [10, 20].
        let future: Vec<(f64, f64)> = (1..=60)
            .map(|i| {
                let x = 0.5 * i as f64;
                let y = 3.5 * ((x - 10.0) / 10.0).clamp(0.0, 1.0);
                (x, y)
            })
            .collect();
        let route = derive_navigation_route(&future, &lanes, (0.0, 0.0), 3.0, 500).unwrap();
        let last = route.last().unwrap();
        assert!((last.y - 3.5).abs() < 1e-6, "route must end on lane 1");
        assert!(route[0].y.abs() < 1e-6, "route must start on lane 0");
        assert!(last.x > 100.0);
    }

    #[test]
    fn long_road_caps_at_500_points() {
        // Chain 10 lanes of 160 m = 1600 m of road; cap is min(1500 m, 500 pts).
        let mut lanes = Vec::new();
        for i in 0..10 {
            let succ = if i + 1 < 10 { vec![i + 1] } else { vec![] };
            lanes.push(straight_lane(
                i,
                160.0 * i as f64 - 10.0,
                160.0 * (i + 1) as f64 - 10.0,
                0.0,
                succ,
            ));
        }
        let future: Vec<(f64, f64)> = (1..=50).map(|i| (0.5 * i as f64, 0.0)).collect();
        let route = derive_navigation_route(&future, &lanes, (0.0, 0.0), 3.0, 500).unwrap();
        assert_eq!(route.len(), 500);
    }

    #[test]
    fn unmatched_future_errors() {
        let lanes = vec![straight_lane(0, -20.0, 100.0, 0.0, vec![])];
        let future = vec![(0.0, 0.0), (10.0, 8.0)];
        let err = derive_navigation_route(&future, &lanes, (0.0, 0.0), 3.0, 500);
        assert!(matches!(err, Err(Error::RouteDerivation(_))));
    }

    #[test]
    fn monotone_arc_length() {
        let lanes = vec![straight_lane(0, -20.0, 200.0, 0.0, vec![])];
        let future: Vec<(f64, f64)> = (1..=50).map(|i| (0.4 * i as f64, 0.0)).collect();
        let route = derive_navigation_route(&future, &lanes, (0.0, 0.0), 3.0, 500).unwrap();
        for w in route.windows(2) {
            assert!(w[1].s > w[0].s);
        }
    }
}
