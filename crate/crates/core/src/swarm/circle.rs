use std::f64::consts::FRAC_PI_4;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::dynamics::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CirclePlane {
    /// Horizontal.
    Xy,
    /// Vertical: the horizontal circle turned 90° about x.
    Xz,
    /// Turned 45° about x.
    Slant45,
}

impl CirclePlane {
    fn tilt(self) -> f64 {
        match self {
            CirclePlane::Xy => 0.0,
            CirclePlane::Xz => FRAC_PI_2,
            CirclePlane::Slant45 => FRAC_PI_4,
        }
    }

    /// Orthonormal in-plane axes `(u, v)`; the path is `cos·u + sin·v`.
    pub fn axes(self) -> (Vec3, Vec3) {
        let t = self.tilt();
        (Vec3::X, Vec3::new(0.0, t.cos(), t.sin()))
    }
}

/// Reference position on a circle traversed at constant `speed`.
pub fn circle_waypoint(radius: f64, speed: f64, plane: CirclePlane, phase: f64, t: f64, center: Vec3) -> Vec3 {
    let angle = speed / radius * t + phase;
    let (u, v) = plane.axes();
    center + (u * angle.cos() + v * angle.sin()) * radius
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn start_point() {
        let p = circle_waypoint(0.5, 1.0, CirclePlane::Xy, 0.0, 0.0, Vec3::ZERO);
        assert_eq!(p, Vec3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn quarter_period() {
        let p = circle_waypoint(0.5, 1.0, CirclePlane::Xy, 0.0, PI / 4.0, Vec3::ZERO);
        assert!((p - Vec3::new(0.0, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn full_period_returns() {
        for plane in [CirclePlane::Xy, CirclePlane::Xz, CirclePlane::Slant45] {
            let c = Vec3::new(1.0, 2.0, 3.0);
            let a = circle_waypoint(0.5, 1.0, plane, 0.3, 0.0, c);
            let b = circle_waypoint(0.5, 1.0, plane, 0.3, PI, c);
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn planes() {
        let q = |plane| circle_waypoint(0.5, 1.0, plane, FRAC_PI_2, 0.0, Vec3::ZERO);
        assert!((q(CirclePlane::Xz) - Vec3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        let s = q(CirclePlane::Slant45);
        assert!((s.y - s.z).abs() < 1e-12 && s.y > 0.0);
        for plane in [CirclePlane::Xy, CirclePlane::Xz, CirclePlane::Slant45] {
            for i in 0..20 {
                let p = circle_waypoint(0.5, 1.0, plane, 0.0, i as f64 * 0.37, Vec3::ZERO);
                assert!((p.norm() - 0.5).abs() < 1e-12);
            }
        }
    }
}
