//! Artificial potential field guidance.
//!
//! Attraction is linear in the goal offset (saturated at `v_max`);
//! repulsion from each neighbor inside `d0` is `k_rep·(1/d − 1/d0)/d²`
//! along the line away from it.

use crate::dynamics::Vec3;

use super::{ApfParams, SwarmError};

const COINCIDENT: f64 = 1e-9;
const ANTI_PARALLEL_TOL: f64 = 1e-6;
const NUDGE_ANGLE: f64 = 0.01;

/// Summed repulsion from `neighbors`, visited in slice order.
fn repulsion(me: Vec3, neighbors: &[Vec3], p: &ApfParams) -> Result<Vec3, SwarmError> {
    let mut total = Vec3::ZERO;
    for &n in neighbors {
        let away = me - n;
        let d = away.norm();
        if d < COINCIDENT {
            return Err(SwarmError::NeighborCoincident);
        }
        if d < p.d0 {
            total += away * (p.k_rep * (1.0 / d - 1.0 / p.d0) / (d * d * d));
        }
    }
    Ok(total)
}

/// Rotates `v` by a small fixed angle about +z, or about +x when `v` is
/// vertical. Breaks the symmetric dead-lock of a goal straight behind a
/// neighbor.
fn nudge(v: Vec3) -> Vec3 {
    let n = v.norm();
    let axis = if (v.z.abs() - n).abs() <= ANTI_PARALLEL_TOL * n {
        Vec3::X
    } else {
        Vec3::Z
    };
    v.rotate_about(axis, NUDGE_ANGLE)
}

/// Desired velocity. `neighbors` must exclude self and be ordered by
/// ascending FLS id so that the result depends only on positions and ids.
pub fn apf_velocity(me: Vec3, goal: Vec3, neighbors: &[Vec3], p: &ApfParams) -> Result<Vec3, SwarmError> {
    let attraction = ((goal - me) * p.k_att).clamp_norm(p.v_max);
    let mut rep = repulsion(me, neighbors, p)?;
    let (na, nr) = (attraction.norm(), rep.norm());
    if na > 0.0 && nr > 0.0 && attraction.dot(rep) / (na * nr) < -1.0 + ANTI_PARALLEL_TOL {
        rep = nudge(rep);
    }
    Ok((attraction + rep).clamp_norm(p.v_max))
}

/// Adds locally sensed repulsion to an externally planned velocity command.
/// Neighbors closer than the coincidence threshold are skipped.
pub fn reactive_avoid(cmd: Vec3, me: Vec3, neighbors: &[Vec3], p: &ApfParams) -> Vec3 {
    let sensed: Vec<Vec3> = neighbors
        .iter()
        .copied()
        .filter(|n| me.distance(*n) >= COINCIDENT)
        .collect();
    let rep = repulsion(me, &sensed, p).expect("coincident neighbors filtered");
    (cmd + rep).clamp_norm(p.v_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ApfParams {
        ApfParams::default()
    }

    #[test]
    fn at_goal_alone_is_still() {
        assert_eq!(apf_velocity(Vec3::X, Vec3::X, &[], &params()).unwrap(), Vec3::ZERO);
    }

    #[test]
    fn far_neighbor_gives_pure_attraction() {
        let p = ApfParams { k_att: 1.0, ..params() };
        let v = apf_velocity(Vec3::ZERO, Vec3::new(0.3, 0.0, 0.0), &[Vec3::new(0.0, 0.6, 0.0)], &p).unwrap();
        assert!((v - Vec3::new(0.3, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn anti_parallel_is_nudged() {
        let p = ApfParams { k_att: 1.0, k_rep: 0.1, d0: 2.0, safety_radius: 0.1, v_max: 10.0 };
        let v = apf_velocity(Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0), &[Vec3::X], &p).unwrap();
        // Attraction 2, repulsion 0.1·(1 − 1/2) = 0.05 straight back.
        assert!((v.x - (2.0 - 0.05 * 0.01f64.cos())).abs() < 1e-12);
        assert!(v.y != 0.0);
        assert!((v.y + 0.05 * 0.01f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn vertical_anti_parallel_nudged_about_x() {
        let p = ApfParams { k_att: 1.0, k_rep: 0.1, d0: 2.0, safety_radius: 0.1, v_max: 10.0 };
        let v = apf_velocity(Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0), &[Vec3::Z], &p).unwrap();
        assert!(v.y.abs() > 0.0);
    }

    #[test]
    fn coincident_neighbor_rejected() {
        assert_eq!(
            apf_velocity(Vec3::ZERO, Vec3::X, &[Vec3::ZERO], &params()),
            Err(SwarmError::NeighborCoincident)
        );
    }

    #[test]
    fn attraction_saturates() {
        let v = apf_velocity(Vec3::ZERO, Vec3::new(10.0, 0.0, 0.0), &[], &params()).unwrap();
        assert!((v.norm() - params().v_max).abs() < 1e-12);
    }

    #[test]
    fn reactive_no_neighbors_in_range() {
        let cmd = Vec3::new(0.3, 0.1, 0.0);
        assert_eq!(reactive_avoid(cmd, Vec3::ZERO, &[Vec3::new(3.0, 0.0, 0.0)], &params()), cmd);
    }

    #[test]
    fn reactive_head_on_slows() {
        let cmd = Vec3::new(0.5, 0.0, 0.0);
        let out = reactive_avoid(cmd, Vec3::ZERO, &[Vec3::new(0.3, 0.0, 0.0)], &params());
        assert!(out.x < cmd.x);
    }

    #[test]
    fn reactive_clipped() {
        let cmd = Vec3::new(0.0, 1.0, 0.0);
        let out = reactive_avoid(cmd, Vec3::ZERO, &[Vec3::new(0.15, 0.0, 0.0)], &params());
        assert!(out.norm() <= params().v_max + 1e-12);
    }

    #[test]
    fn converges_without_neighbors() {
        let p = params();
        let goal = Vec3::new(1.0, -2.0, 0.5);
        let mut x = Vec3::new(3.0, 1.0, 2.0);
        let mut prev = x.distance(goal);
        for _ in 0..2000 {
            x += apf_velocity(x, goal, &[], &p).unwrap() * 0.01;
            let d = x.distance(goal);
            assert!(d <= prev);
            prev = d;
        }
        assert!(prev < 1e-3);
    }

    proptest! {
        #[test]
        fn speed_bounded(
            sx in -2.0..2.0f64, sy in -2.0..2.0f64, gx in -5.0..5.0f64,
            nx in -1.0..1.0f64, ny in -1.0..1.0f64, nz in 0.01..1.0f64,
        ) {
            let me = Vec3::new(sx, sy, 0.0);
            let n = me + Vec3::new(nx, ny, nz) * 0.3;
            let v = apf_velocity(me, Vec3::new(gx, 0.0, 1.0), &[n], &params()).unwrap();
            prop_assert!(v.norm() <= params().v_max + 1e-12);
        }

        #[test]
        fn deterministic(sx in -2.0..2.0f64, nx in -1.0..1.0f64) {
            let me = Vec3::new(sx, 0.0, 0.0);
            let ns = [Vec3::new(sx + nx * 0.2 + 0.05, 0.1, 0.0), Vec3::new(sx, 0.2, 0.1)];
            let a = apf_velocity(me, Vec3::new(5.0, 0.0, 0.0), &ns, &params()).unwrap();
            let b = apf_velocity(me, Vec3::new(5.0, 0.0, 0.0), &ns, &params()).unwrap();
            prop_assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits));
        }
    }
}
