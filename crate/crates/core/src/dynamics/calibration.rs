//! Thrust-fraction to force calibration with per-point measurement noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DynamicsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    /// Thrust as a fraction of the maximum motor voltage.
    pub u: f64,
    /// Mean measured force, N.
    pub mean_force: f64,
    /// Standard deviation of the measured force, N.
    pub sigma: f64,
}

/// Piecewise-linear force curve. The first entry is always `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CalibrationPoint>", into = "Vec<CalibrationPoint>")]
pub struct CalibrationCurve {
    points: Vec<CalibrationPoint>,
}

const DEFAULT_MAX_FORCE: f64 = 3.5;
const DEFAULT_PEAK_SIGMA: f64 = 0.43;
const DEFAULT_PEAK_SIGMA_AT: f64 = 0.9;

impl Default for CalibrationCurve {
    /// `F(u) = 3.5·u²` sampled every 0.1, with sigma rising linearly to
    /// 0.43 N at u = 0.9 and flat after.
    fn default() -> Self {
        let points = (0..=10)
            .map(|i| {
                let u = i as f64 / 10.0;
                CalibrationPoint {
                    u,
                    mean_force: DEFAULT_MAX_FORCE * u * u,
                    sigma: DEFAULT_PEAK_SIGMA * (u / DEFAULT_PEAK_SIGMA_AT).min(1.0),
                }
            })
            .collect();
        Self { points }
    }
}

impl TryFrom<Vec<CalibrationPoint>> for CalibrationCurve {
    type Error = DynamicsError;

    fn try_from(points: Vec<CalibrationPoint>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<CalibrationCurve> for Vec<CalibrationPoint> {
    fn from(c: CalibrationCurve) -> Self {
        c.points
    }
}

impl CalibrationCurve {
    /// Builds a curve from measured points. Points are sorted by `u`; a
    /// `u = 0` entry is replaced (or inserted) as `(0, 0, 0)`.
    pub fn new(mut points: Vec<CalibrationPoint>) -> Result<Self, DynamicsError> {
        if points
            .iter()
            .any(|p| !(p.u.is_finite() && p.mean_force.is_finite() && p.sigma.is_finite()))
        {
            return Err(DynamicsError::InvalidCurve("non-finite entry".into()));
        }
        if points.iter().any(|p| !(0.0..=1.0).contains(&p.u)) {
            return Err(DynamicsError::InvalidCurve("u outside [0, 1]".into()));
        }
        points.retain(|p| p.u > 0.0);
        points.sort_by(|a, b| a.u.total_cmp(&b.u));
        points.insert(
            0,
            CalibrationPoint {
                u: 0.0,
                mean_force: 0.0,
                sigma: 0.0,
            },
        );
        for w in points.windows(2) {
            if w[0].u == w[1].u {
                return Err(DynamicsError::InvalidCurve(format!("duplicate u = {}", w[1].u)));
            }
            if w[1].mean_force < w[0].mean_force {
                return Err(DynamicsError::InvalidCurve(format!(
                    "mean force decreases at u = {}",
                    w[1].u
                )));
            }
        }
        if points.iter().any(|p| p.sigma < 0.0) {
            return Err(DynamicsError::InvalidCurve("negative sigma".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CalibrationPoint] {
        &self.points
    }

    /// Force at the largest calibrated thrust.
    pub fn max_force(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.mean_force)
    }

    /// Interpolated `(mean_force, sigma)` at thrust `u`. Beyond the last
    /// calibrated point the last values are held.
    pub fn interpolate(&self, u: f64) -> (f64, f64) {
        let pts = &self.points;
        let idx = pts.partition_point(|p| p.u <= u);
        if idx == pts.len() {
            let last = pts[pts.len() - 1];
            return (last.mean_force, last.sigma);
        }
        let (a, b) = (pts[idx - 1], pts[idx]);
        let t = (u - a.u) / (b.u - a.u);
        (
            a.mean_force + t * (b.mean_force - a.mean_force),
            a.sigma + t * (b.sigma - a.sigma),
        )
    }

    /// Smallest thrust whose mean force reaches `force`; saturates at the
    /// last calibrated `u`.
    pub fn thrust_for_force(&self, force: f64) -> f64 {
        if force <= 0.0 {
            return 0.0;
        }
        let pts = &self.points;
        let idx = pts.partition_point(|p| p.mean_force < force);
        if idx == pts.len() {
            return pts[pts.len() - 1].u;
        }
        let (a, b) = (pts[idx - 1], pts[idx]);
        if b.mean_force == a.mean_force {
            return a.u;
        }
        a.u + (force - a.mean_force) / (b.mean_force - a.mean_force) * (b.u - a.u)
    }
}

/// Force produced at thrust fraction `u`. With an rng, Gaussian noise with
/// the interpolated sigma is added; the result is never negative.
pub fn thrust_to_force<R: Rng + ?Sized>(
    curve: &CalibrationCurve,
    u: f64,
    rng: Option<&mut R>,
) -> Result<f64, DynamicsError> {
    if !(0.0..=1.0).contains(&u) {
        return Err(DynamicsError::OutOfRange { value: u, min: 0.0, max: 1.0 });
    }
    let (mean, sigma) = curve.interpolate(u);
    let force = match rng {
        Some(rng) if sigma > 0.0 => {
            let noise = Normal::new(0.0, sigma).expect("sigma is finite and positive");
            mean + noise.sample(rng)
        }
        _ => mean,
    };
    Ok(force.max(0.0))
}
