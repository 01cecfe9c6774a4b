//! Polyline resampling at uniform arc-length spacing.

use crate::error::{Error, Result};

/// A resampled point: position, tangent heading, and cumulative arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub s: f64,
}

/// Cumulative arc length of a polyline (piecewise-linear).
pub fn arc_length(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let dx = w[1].0 - w[0].0;
            let dy = w[1].1 - w[0].1;
            (dx * dx + dy * dy).sqrt()
        })
        .sum()
}

/// Resample an ordered polyline at exact multiples of `spacing` along its
/// cumulative arc length, interpolating linearly between input vertices. The
/// heading of each output point is the direction of the segment it falls on.
pub fn resample_polyline(points: &[(f64, f64)], spacing: f64) -> Result<Vec<SamplePoint>> {
    if spacing <= 0.0 || !spacing.is_finite() {
        return Err(Error::InvalidInput(format!("invalid spacing {spacing}")));
    }
    if points.len() < 2 {
        return Err(Error::InvalidInput(
            "polyline needs at least 2 points".into(),
        ));
    }
    // Cumulative arc length per vertex; drop zero-length segments.
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0f64);
    for w in points.windows(2) {
        let dx = w[1].0 - w[0].0;
        let dy = w[1].1 - w[0].1;
        let d = (dx * dx + dy * dy).sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if total <= 0.0 {
        return Err(Error::InvalidInput(
            "degenerate zero-length polyline".into(),
        ));
    }

    let mut out = Vec::with_capacity((total / spacing) as usize + 2);
    let mut seg = 0usize; // current segment index into points
    let mut k = 0usize;
    loop {
        let s = k as f64 * spacing;
        // Absorb floating slack at the tail so a polyline whose length is an
        // exact multiple of the spacing includes its final vertex.
        if s > total + spacing * 1e-9 {
            break;
        }
        let s_clamped = s.min(total);
        while seg + 2 < points.len() && cum[seg + 1] < s_clamped {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = if seg_len > 0.0 {
            ((s_clamped - cum[seg]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (x0, y0) = points[seg];
        let (x1, y1) = points[seg + 1];
        let heading = (y1 - y0).atan2(x1 - x0);
        out.push(SamplePoint {
            x: x0 + t * (x1 - x0),
            y: y0 + t * (y1 - y0),
            heading,
            s: s_clamped,
        });
        k += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn straight_segment() {
        let pts = vec![(0.0, 0.0), (2.0, 0.0)];
        let out = resample_polyline(&pts, 0.5).unwrap();
        assert_eq!(out.len(), 5);
        for (i, p) in out.iter().enumerate() {
            assert_abs_diff_eq!(p.x, 0.5 * i as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(p.y, 0.0);
            assert_abs_diff_eq!(p.heading, 0.0);
        }
    }

    #[test]
    fn quarter_circle_oracle() {
        // Quarter circle of radius 10 sampled finely, resampled at 0.5 m:
        // every output point must sit on the circle to within 1e-3 m.
        let r = 10.0;
        let n = 2000;
        let pts: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
                (r * a.cos(), r * a.sin())
            })
            .collect();
        let out = resample_polyline(&pts, 0.5).unwrap();
        let expected = (r * std::f64::consts::FRAC_PI_2 / 0.5) as usize + 1;
        assert!(out.len() == expected || out.len() == expected + 1, "{}", out.len());
        for p in &out {
            let rad = (p.x * p.x + p.y * p.y).sqrt();
            assert!((rad - r).abs() < 1e-3, "off circle by {}", (rad - r).abs());
        }
    }

    #[test]
    fn idempotent_on_uniform_input() {
        let pts: Vec<(f64, f64)> = (0..40).map(|i| (0.5 * i as f64, 1.5)).collect();
        let out = resample_polyline(&pts, 0.5).unwrap();
        assert_eq!(out.len(), pts.len());
        for (p, q) in out.iter().zip(&pts) {
            assert!((p.x - q.0).abs() < 1e-9 && (p.y - q.1).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_rejected() {
        assert!(resample_polyline(&[(1.0, 1.0), (1.0, 1.0)], 0.5).is_err());
        assert!(resample_polyline(&[(1.0, 1.0)], 0.5).is_err());
        assert!(resample_polyline(&[(0.0, 0.0), (1.0, 0.0)], 0.0).is_err());
    }
}
