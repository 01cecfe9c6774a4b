//! Ego-centric coordinate transforms.
//!
//! All scene geometry is expressed in the frame of the ego vehicle at the
//! reference timestep: the ego pose maps to the origin with heading zero.

use crate::error::{Error, Result};

/// A 2D pose: position plus heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose2 { x, y, heading }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * std::f64::consts::PI);
    if r > std::f64::consts::PI {
        r -= 2.0 * std::f64::consts::PI;
    }
    r
}

/// Rigid transform from a global frame into the frame anchored at `ego`.
///
/// The ego pose itself maps to (0, 0, 0); distances are preserved.
#[derive(Debug, Clone, Copy)]
pub struct EgoFrame {
    origin: Pose2,
    cos_h: f64,
    sin_h: f64,
}

impl EgoFrame {
    pub fn new(ego: Pose2) -> Result<Self> {
        if !ego.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite ego pose ({}, {}, {})",
                ego.x, ego.y, ego.heading
            )));
        }
        Ok(EgoFrame {
            origin: ego,
            cos_h: ego.heading.cos(),
            sin_h: ego.heading.sin(),
        })
    }

    pub fn origin(&self) -> Pose2 {
        self.origin
    }

    /// Global point -> ego-frame point.
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.origin.x;
        let dy = y - self.origin.y;
        (
            dx * self.cos_h + dy * self.sin_h,
            -dx * self.sin_h + dy * self.cos_h,
        )
    }

    /// Ego-frame point -> global point.
    pub fn to_global(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.origin.x + x * self.cos_h - y * self.sin_h,
            self.origin.y + x * self.sin_h + y * self.cos_h,
        )
    }

    /// Rotate a global-frame vector (velocity, acceleration) into the ego frame.
    pub fn vec_to_local(&self, vx: f64, vy: f64) -> (f64, f64) {
        (
            vx * self.cos_h + vy * self.sin_h,
            -vx * self.sin_h + vy * self.cos_h,
        )
    }

    pub fn heading_to_local(&self, h: f64) -> f64 {
        wrap_angle(h - self.origin.heading)
    }

    pub fn heading_to_global(&self, h: f64) -> f64 {
        wrap_angle(h + self.origin.heading)
    }

    pub fn pose_to_local(&self, p: Pose2) -> Pose2 {
        let (x, y) = self.to_local(p.x, p.y);
        Pose2::new(x, y, self.heading_to_local(p.heading))
    }

    pub fn pose_to_global(&self, p: Pose2) -> Pose2 {
        let (x, y) = self.to_global(p.x, p.y);
        Pose2::new(x, y, self.heading_to_global(p.heading))
    }
}

/// Transform a batch of global (x, y, heading) triples into the ego frame.
pub fn to_ego_frame(entities: &[Pose2], ego: Pose2) -> Result<Vec<Pose2>> {
    let frame = EgoFrame::new(ego)?;
    Ok(entities.iter().map(|p| frame.pose_to_local(*p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn origin_shift() {
        let f = EgoFrame::new(Pose2::new(5.0, 0.0, 0.0)).unwrap();
        let (x, y) = f.to_local(5.0, 0.0);
        assert_eq!((x, y), (0.0, 0.0));
    }

    #[test]
    fn rotation_quarter_turn() {
        // Ego at origin facing +y: the point (1, 0) lands at (0, -1) and a
        // zero heading becomes -pi/2.
        let f = EgoFrame::new(Pose2::new(0.0, 1e-300, FRAC_PI_2)).unwrap();
        let p = f.pose_to_local(Pose2::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.heading, -FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_pose_rejected() {
        assert!(EgoFrame::new(Pose2::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(EgoFrame::new(Pose2::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn wrap_convention() {
        assert_abs_diff_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI);
        assert_abs_diff_eq!(wrap_angle(0.1 - 2.0 * PI), 0.1, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn round_trip_identity(
            ex in -1000.0..1000.0f64, ey in -1000.0..1000.0f64, eh in -PI..PI,
            px in -1000.0..1000.0f64, py in -1000.0..1000.0f64, ph in -PI..PI,
        ) {
            let f = EgoFrame::new(Pose2::new(ex, ey, eh)).unwrap();
            let local = f.pose_to_local(Pose2::new(px, py, ph));
            let back = f.pose_to_global(local);
            prop_assert!((back.x - px).abs() < 1e-9);
            prop_assert!((back.y - py).abs() < 1e-9);
            prop_assert!(wrap_angle(back.heading - ph).abs() < 1e-9);
        }

        #[test]
        fn distances_preserved(
            ex in -100.0..100.0f64, ey in -100.0..100.0f64, eh in -PI..PI,
            ax in -100.0..100.0f64, ay in -100.0..100.0f64,
            bx in -100.0..100.0f64, by in -100.0..100.0f64,
        ) {
            let f = EgoFrame::new(Pose2::new(ex, ey, eh)).unwrap();
            let (lax, lay) = f.to_local(ax, ay);
            let (lbx, lby) = f.to_local(bx, by);
            let d_global = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
            let d_local = ((lax - lbx).powi(2) + (lay - lby).powi(2)).sqrt();
            let scale = d_global.max(1.0);
            prop_assert!((d_global - d_local).abs() / scale < 1e-9);
        }
    }
}
