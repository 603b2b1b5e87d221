//! PD / PID position control laws.

use serde::{Deserialize, Serialize};

use super::{DynamicsError, Vec3};

/// Per-axis controller gains plus the vehicle mass they act on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    /// Proportional gain, N/m.
    pub kp: f64,
    /// Derivative gain, N·s/m.
    pub kd: f64,
    /// Integral gain, N/(m·s). Zero disables the integral channel.
    pub ki: f64,
    /// Anti-windup bound on the integral force, N. Infinite means unclamped.
    pub integral_clamp: f64,
    /// Vehicle mass, kg.
    pub mass: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp: 10.0,
            kd: 1.0,
            ki: 0.0,
            integral_clamp: f64::INFINITY,
            mass: 0.03,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let ok = self.kp > 0.0
            && self.kd >= 0.0
            && self.ki >= 0.0
            && self.mass > 0.0
            && self.integral_clamp >= 0.0
            && self.kp.is_finite()
            && self.kd.is_finite()
            && self.ki.is_finite()
            && self.mass.is_finite();
        if ok {
            Ok(())
        } else {
            Err(DynamicsError::InvalidGains(*self))
        }
    }

    pub fn with_ki(mut self, ki: f64) -> Self {
        self.ki = ki;
        self
    }
}

/// `kp·error + kd·error_rate`, per axis.
pub fn pd_force(gains: &ControllerGains, error: Vec3, error_rate: Vec3) -> Vec3 {
    error * gains.kp + error_rate * gains.kd
}

/// PD force plus the integral channel.
///
/// The integral state accumulates `error·dt` and is clamped componentwise to
/// `±integral_clamp/ki` so the integral force never exceeds `integral_clamp`.
/// Returns the force and the updated integral state.
pub fn pid_force(
    gains: &ControllerGains,
    error: Vec3,
    error_rate: Vec3,
    integral: Vec3,
    dt: f64,
) -> (Vec3, Vec3) {
    let pd = pd_force(gains, error, error_rate);
    if gains.ki == 0.0 {
        return (pd, integral);
    }
    let bound = gains.integral_clamp / gains.ki;
    let next = (integral + error * dt).map(|c| c.clamp(-bound, bound));
    (pd + next * gains.ki, next)
}

/// Stateful setpoint tracker. The error rate is the backward difference of
/// successive measured errors; the first sample uses a zero rate.
#[derive(Debug, Clone, Default)]
pub struct PositionController {
    pub gains: ControllerGains,
    prev_error: Option<Vec3>,
    integral: Vec3,
}

impl PositionController {
    pub fn new(gains: ControllerGains) -> Self {
        Self {
            gains,
            prev_error: None,
            integral: Vec3::ZERO,
        }
    }

    /// Force command for measured `error = setpoint − position`.
    pub fn update(&mut self, error: Vec3, dt: f64) -> Vec3 {
        let rate = self.prev_error.map_or(Vec3::ZERO, |prev| (error - prev) / dt);
        self.prev_error = Some(error);
        let (force, integral) = pid_force(&self.gains, error, rate, self.integral, dt);
        self.integral = integral;
        force
    }

    pub fn integral(&self) -> Vec3 {
        self.integral
    }

    pub fn last_error(&self) -> Option<Vec3> {
        self.prev_error
    }

    pub fn reset(&mut self) {
        self.prev_error = None;
        self.integral = Vec3::ZERO;
    }
}
