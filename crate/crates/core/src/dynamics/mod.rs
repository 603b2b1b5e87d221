//! Point-mass flight dynamics: integration, control laws, thrust calibration,
//! downwash disturbance and motion-limit enforcement.
//!
//! Attitude is abstracted away; a vehicle is a point mass whose flight
//! controller produces a force vector directly. Gravity is assumed to be
//! cancelled by hover thrust and is not part of the translational model.

mod calibration;
mod control;
mod vec3;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibration::{thrust_to_force, CalibrationCurve, CalibrationPoint};
pub use control::{pd_force, pid_force, ControllerGains, PositionController};
pub use vec3::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("value {value} outside [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("invalid controller gains {0:?}")]
    InvalidGains(ControllerGains),
    #[error("invalid calibration curve: {0}")]
    InvalidCurve(String),
    #[error("invalid motion limits: {0}")]
    InvalidLimits(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl KinematicState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionLimits {
    /// m/s
    pub max_speed: f64,
    /// m
    pub min_turn_radius: f64,
    /// Minimum vertical separation below another vehicle, m.
    pub min_clearance: f64,
    /// Fraction of the maximum force held back for disturbance rejection.
    pub thrust_headroom: f64,
    /// Maximum force the vehicle can produce, N.
    pub max_force: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        Self {
            max_speed: 2.0,
            min_turn_radius: 0.1,
            min_clearance: 0.1,
            thrust_headroom: 0.2,
            max_force: 3.5,
        }
    }
}

impl MotionLimits {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("max_speed", self.max_speed),
            ("min_turn_radius", self.min_turn_radius),
            ("min_clearance", self.min_clearance),
            ("thrust_headroom", self.thrust_headroom),
            ("max_force", self.max_force),
        ];
        for (name, v) in fields {
            if v.is_nan() || v < 0.0 {
                return Err(DynamicsError::InvalidLimits(format!("{name} = {v}")));
            }
        }
        if self.thrust_headroom >= 1.0 {
            return Err(DynamicsError::InvalidLimits(format!(
                "thrust_headroom = {} must be < 1",
                self.thrust_headroom
            )));
        }
        Ok(())
    }

    /// Largest force available to the controller after the headroom reserve.
    pub fn usable_force(&self) -> f64 {
        (1.0 - self.thrust_headroom) * self.max_force
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Violation {
    Speed,
    TurnRadius,
    Force,
    Clearance,
}

/// Semi-implicit Euler step: `v' = v + a·dt`, `p' = p + v'·dt`.
pub fn integrate(s: KinematicState, accel: Vec3, dt: f64) -> Result<KinematicState, DynamicsError> {
    if !(s.position.is_finite() && s.velocity.is_finite() && accel.is_finite() && dt.is_finite()) {
        return Err(DynamicsError::NonFiniteInput("integrate"));
    }
    if dt <= 0.0 {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    let velocity = s.velocity + accel * dt;
    Ok(KinematicState {
        position: s.position + velocity * dt,
        velocity,
    })
}

/// Far-field downwash model: a conical jet below each vehicle whose force
/// decays with the square of the vertical separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownwashParams {
    /// Force coefficient, N·m².
    pub k: f64,
    /// Cone half-angle, rad.
    pub half_angle: f64,
}

impl Default for DownwashParams {
    fn default() -> Self {
        Self {
            k: 0.002,
            half_angle: 15f64.to_radians(),
        }
    }
}

/// Vertical separations below this are treated as this value when computing
/// the force, keeping it bounded for stacked vehicles.
const MIN_DOWNWASH_SEPARATION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Downwash {
    pub force: Vec3,
    pub accel: Vec3,
    pub clearance_violation: bool,
}

/// Summed downwash from every vehicle strictly above `self_pos` whose cone
/// contains it. `others` must not include `self_pos`.
pub fn downwash_accel(
    self_pos: Vec3,
    others: &[Vec3],
    params: &DownwashParams,
    mass: f64,
    min_clearance: f64,
) -> Downwash {
    let tan = params.half_angle.tan();
    let mut force = 0.0;
    let mut clearance_violation = false;
    for other in others {
        let dz = other.z - self_pos.z;
        if dz <= 0.0 {
            continue;
        }
        let lateral = ((other.x - self_pos.x).powi(2) + (other.y - self_pos.y).powi(2)).sqrt();
        if lateral > dz * tan {
            continue;
        }
        if dz < min_clearance {
            clearance_violation = true;
        }
        force += params.k / dz.max(MIN_DOWNWASH_SEPARATION).powi(2);
    }
    let force = Vec3::new(0.0, 0.0, -force);
    Downwash {
        force,
        accel: force / mass,
        clearance_violation,
    }
}

/// One constrained step.
///
/// The commanded acceleration is capped so the commanded force stays within
/// `(1 − thrust_headroom)·max_force`; the external `disturbance` is added
/// uncapped. After integration the speed is clipped to `max_speed`. A turn
/// tighter than `min_turn_radius` is reported but not corrected.
pub fn enforce_limits(
    s: KinematicState,
    commanded: Vec3,
    disturbance: Vec3,
    limits: &MotionLimits,
    mass: f64,
    dt: f64,
) -> Result<(KinematicState, Vec<Violation>), DynamicsError> {
    let mut violations = Vec::new();
    let max_accel = limits.usable_force() / mass;
    let commanded = if commanded.norm() > max_accel {
        violations.push(Violation::Force);
        commanded.clamp_norm(max_accel)
    } else {
        commanded
    };
    let accel = commanded + disturbance;

    if let Some(dir) = s.velocity.try_normalize(1e-12) {
        let centripetal = accel - dir * accel.dot(dir);
        let a_perp = centripetal.norm();
        if a_perp > 0.0 && s.velocity.norm_squared() / a_perp < limits.min_turn_radius {
            violations.push(Violation::TurnRadius);
        }
    }

    if !(s.position.is_finite() && s.velocity.is_finite() && accel.is_finite()) {
        return Err(DynamicsError::NonFiniteInput("enforce_limits"));
    }
    if dt <= 0.0 {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    let mut velocity = s.velocity + accel * dt;
    if velocity.norm() > limits.max_speed {
        violations.push(Violation::Speed);
        velocity = velocity.clamp_norm(limits.max_speed);
    }
    Ok((
        KinematicState {
            position: s.position + velocity * dt,
            velocity,
        },
        violations,
    ))
}
