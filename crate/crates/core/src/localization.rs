//! Ranging error model, anchor-based multilateration and the decentralized
//! distance-and-bearing correction step.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Vec3;

pub const MAX_ITERATIONS: usize = 100;
pub const STEP_TOLERANCE: f64 = 1e-9;
/// Ratio of smallest to largest spread of the anchors below which they are
/// treated as coplanar.
const COPLANAR_RATIO: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizationError {
    #[error("{value} outside [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("need at least 4 anchors, got {0}")]
    InsufficientAnchors(usize),
    #[error("{ranges} ranges for {anchors} anchors")]
    RangeCountMismatch { ranges: usize, anchors: usize },
    #[error("anchor geometry is degenerate")]
    DegenerateGeometry,
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("invalid ranging model: {0}")]
    InvalidModel(String),
    #[error("non-finite input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangingModel {
    /// Std of the additive Gaussian noise, m.
    pub sigma: f64,
    /// Distance at which the sensor was calibrated, m.
    pub calib_distance: f64,
    /// Overestimate per metre away from the calibration distance.
    pub bias_slope: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for RangingModel {
    fn default() -> Self {
        Self {
            sigma: 0.075,
            calib_distance: 1.0,
            bias_slope: 0.05,
            min_range: 0.0,
            max_range: 20.0,
        }
    }
}

impl RangingModel {
    /// Noise-free, bias-free sensor.
    pub fn exact() -> Self {
        Self {
            sigma: 0.0,
            bias_slope: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LocalizationError> {
        let ok = self.sigma >= 0.0
            && self.sigma.is_finite()
            && self.bias_slope.is_finite()
            && self.calib_distance >= 0.0
            && self.min_range >= 0.0
            && self.max_range > self.min_range
            && self.max_range.is_finite();
        if ok {
            Ok(())
        } else {
            Err(LocalizationError::InvalidModel(format!("{self:?}")))
        }
    }
}

/// One noisy range reading.
pub fn simulate_range<R: Rng + ?Sized>(
    model: &RangingModel,
    true_distance: f64,
    rng: &mut R,
) -> Result<f64, LocalizationError> {
    if !(model.min_range..=model.max_range).contains(&true_distance) {
        return Err(LocalizationError::OutOfRange {
            value: true_distance,
            min: model.min_range,
            max: model.max_range,
        });
    }
    let bias = model.bias_slope * (true_distance - model.calib_distance).abs();
    let noise = if model.sigma > 0.0 {
        Normal::new(0.0, model.sigma).expect("sigma validated").sample(rng)
    } else {
        0.0
    };
    Ok((true_distance + bias + noise).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: u32,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Anchor>", into = "Vec<Anchor>")]
pub struct AnchorSet {
    anchors: Vec<Anchor>,
}

impl TryFrom<Vec<Anchor>> for AnchorSet {
    type Error = LocalizationError;
    fn try_from(v: Vec<Anchor>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<AnchorSet> for Vec<Anchor> {
    fn from(a: AnchorSet) -> Self {
        a.anchors
    }
}

impl AnchorSet {
    pub fn new(anchors: Vec<Anchor>) -> Result<Self, LocalizationError> {
        if anchors.len() < 4 {
            return Err(LocalizationError::InsufficientAnchors(anchors.len()));
        }
        if anchors.iter().any(|a| !a.position.is_finite()) {
            return Err(LocalizationError::NonFinite);
        }
        if is_coplanar(anchors.iter().map(|a| a.position)) {
            return Err(LocalizationError::DegenerateGeometry);
        }
        Ok(Self { anchors })
    }

    pub fn from_positions(positions: &[Vec3]) -> Result<Self, LocalizationError> {
        Self::new(
            positions
                .iter()
                .enumerate()
                .map(|(i, &position)| Anchor { id: i as u32, position })
                .collect(),
        )
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.anchors.iter().map(|a| a.position).sum::<Vec3>() / self.anchors.len() as f64
    }

    /// Exact distances from `p` to every anchor.
    pub fn ranges_to(&self, p: Vec3) -> Vec<f64> {
        self.anchors.iter().map(|a| a.position.distance(p)).collect()
    }
}

fn to_na(v: Vec3) -> Vector3<f64> {
    Vector3::new(v.x, v.y, v.z)
}

fn from_na(v: &Vector3<f64>) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn is_coplanar(points: impl Iterator<Item = Vec3> + Clone) -> bool {
    let n = points.clone().count() as f64;
    let mean = points.clone().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = to_na(p - mean);
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let max = eig.max();
    max <= 0.0 || eig.min() / max < COPLANAR_RATIO
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub position: Vec3,
    pub residual_rms: f64,
    pub iterations: usize,
}

fn residuals<'a>(anchors: &'a AnchorSet, ranges: &'a [f64], p: Vec3) -> impl Iterator<Item = f64> + 'a {
    anchors
        .anchors
        .iter()
        .zip(ranges)
        .map(move |(a, d)| a.position.distance(p) - d)
}

fn cost(anchors: &AnchorSet, ranges: &[f64], p: Vec3) -> f64 {
    residuals(anchors, ranges, p).map(|r| r * r).sum()
}

/// Gradient of half the squared-residual cost, `Jᵀr`.
pub fn cost_gradient(anchors: &AnchorSet, ranges: &[f64], p: Vec3) -> Vec3 {
    anchors
        .anchors
        .iter()
        .zip(ranges)
        .filter_map(|(a, d)| {
            let diff = p - a.position;
            let dist = diff.norm();
            (dist > 0.0).then(|| diff * ((dist - d) / dist))
        })
        .sum()
}

/// Linearized least squares (differences against the first anchor); used as
/// a starting point when the system is over-determined.
fn linear_initial_guess(anchors: &AnchorSet, ranges: &[f64]) -> Option<Vec3> {
    let a0 = anchors.anchors[0].position;
    let d0 = ranges[0];
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (a, &d) in anchors.anchors.iter().zip(ranges).skip(1) {
        let row = to_na((a.position - a0) * 2.0);
        let b = a.position.norm_squared() - a0.norm_squared() - d * d + d0 * d0;
        ata += row * row.transpose();
        atb += row * b;
    }
    let sol = ata.cholesky()?.solve(&atb);
    let p = from_na(&sol);
    p.is_finite().then_some(p)
}

/// Least-squares position from ranges to fixed anchors (Gauss–Newton with
/// step halving).
pub fn trilaterate(
    anchors: &AnchorSet,
    ranges: &[f64],
    initial_guess: Option<Vec3>,
) -> Result<PositionEstimate, LocalizationError> {
    if ranges.len() != anchors.len() {
        return Err(LocalizationError::RangeCountMismatch {
            ranges: ranges.len(),
            anchors: anchors.len(),
        });
    }
    if ranges.iter().any(|r| !r.is_finite()) || initial_guess.is_some_and(|g| !g.is_finite()) {
        return Err(LocalizationError::NonFinite);
    }
    let mut p = initial_guess
        .or_else(|| (anchors.len() >= 5).then(|| linear_initial_guess(anchors, ranges)).flatten())
        .unwrap_or_else(|| anchors.centroid());
    let mut current = cost(anchors, ranges, p);

    for iteration in 1..=MAX_ITERATIONS {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (a, &d) in anchors.anchors.iter().zip(ranges) {
            let diff = p - a.position;
            let dist = diff.norm();
            if dist < 1e-12 {
                continue;
            }
            let row = to_na(diff / dist);
            jtj += row * row.transpose();
            jtr += row * (dist - d);
        }
        let step = jtj
            .cholesky()
            .map(|c| from_na(&c.solve(&(-jtr))))
            .filter(|s| s.is_finite())
            .ok_or(LocalizationError::DegenerateGeometry)?;

        let mut scale = 1.0;
        let mut accepted = None;
        while step.norm() * scale >= STEP_TOLERANCE {
            let candidate = p + step * scale;
            let c = cost(anchors, ranges, candidate);
            if c <= current {
                accepted = Some((candidate, c, step.norm() * scale));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_cost, taken)) = accepted else {
            // No descent possible along the Gauss–Newton direction.
            return Ok(estimate(anchors, ranges, p, iteration));
        };
        p = next;
        current = next_cost;
        if taken < STEP_TOLERANCE {
            return Ok(estimate(anchors, ranges, p, iteration));
        }
    }
    Err(LocalizationError::NoConvergence(MAX_ITERATIONS))
}

fn estimate(anchors: &AnchorSet, ranges: &[f64], p: Vec3, iterations: usize) -> PositionEstimate {
    PositionEstimate {
        position: p,
        residual_rms: (cost(anchors, ranges, p) / anchors.len() as f64).sqrt(),
        iterations,
    }
}

/// Distance and horizontal bearing from an observer to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarObservation {
    pub distance: f64,
    /// Radians in [−π, π], measured in the observer's horizontal plane.
    pub bearing: f64,
}

impl PolarObservation {
    /// Planar offset of the anchor relative to the observer.
    pub fn to_vec(&self) -> Vec3 {
        Vec3::new(self.distance * self.bearing.cos(), self.distance * self.bearing.sin(), 0.0)
    }

    /// What an observer at `observer` sees of an anchor at `anchor`; only the
    /// horizontal components are used.
    pub fn observe(observer: Vec3, anchor: Vec3) -> Self {
        let d = anchor - observer;
        Self {
            distance: d.x.hypot(d.y),
            bearing: d.y.atan2(d.x),
        }
    }
}

/// Displacement that makes the anchor appear at the desired polar offset.
pub fn relative_localize_step(observed: &PolarObservation, desired: &PolarObservation) -> Vec3 {
    observed.to_vec() - desired.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn tetra() -> AnchorSet {
        AnchorSet::from_positions(&[Vec3::ZERO, Vec3::X, Vec3::Y, Vec3::Z]).unwrap()
    }

    fn cube_anchors(side: f64) -> AnchorSet {
        let pts: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64) * side)
            .collect();
        AnchorSet::from_positions(&pts).unwrap()
    }

    #[test]
    fn exact_model_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in [0.0, 0.01, 1.0, 7.3, 20.0] {
            assert_eq!(simulate_range(&RangingModel::exact(), d, &mut rng).unwrap(), d);
        }
    }

    #[test]
    fn out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = RangingModel::default();
        assert!(matches!(
            simulate_range(&m, 25.0, &mut rng),
            Err(LocalizationError::OutOfRange { .. })
        ));
        assert!(simulate_range(&m, -0.1, &mut rng).is_err());
    }

    #[test]
    fn default_model_error_band_at_one_metre() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = RangingModel::default();
        let n = 10_000;
        let mae: f64 = (0..n)
            .map(|_| (simulate_range(&m, 1.0, &mut rng).unwrap() - 1.0).abs())
            .sum::<f64>()
            / n as f64;
        // Half-normal mean is sigma·√(2/π).
        let expected = m.sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mae - expected).abs() < 0.003, "{mae} vs {expected}");
        assert!((0.03..=0.07).contains(&mae));
    }

    #[test]
    fn percentage_error_huge_at_one_centimetre() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = RangingModel::default();
        let n = 2000;
        let over = (0..n)
            .filter(|_| (simulate_range(&m, 0.01, &mut rng).unwrap() - 0.01).abs() >= 0.01)
            .count();
        assert!(over as f64 / n as f64 > 0.8, "{over}");
    }

    #[test]
    fn tetrahedron_exact() {
        let a = tetra();
        let p = Vec3::new(0.25, 0.25, 0.25);
        let est = trilaterate(&a, &a.ranges_to(p), None).unwrap();
        assert!(est.position.distance(p) < 1e-6);
        assert!(est.residual_rms < 1e-9);
    }

    #[test]
    fn coplanar_anchors_rejected() {
        let r = AnchorSet::from_positions(&[Vec3::ZERO, Vec3::X, Vec3::Y, Vec3::new(1.0, 1.0, 0.0)]);
        assert_eq!(r, Err(LocalizationError::DegenerateGeometry));
        assert_eq!(
            AnchorSet::from_positions(&[Vec3::ZERO, Vec3::X, Vec3::Y]),
            Err(LocalizationError::InsufficientAnchors(3))
        );
    }

    #[test]
    fn range_count_checked() {
        assert!(matches!(
            trilaterate(&tetra(), &[1.0, 1.0], None),
            Err(LocalizationError::RangeCountMismatch { .. })
        ));
    }

    #[test]
    fn linear_guess_is_exact_without_noise() {
        let a = cube_anchors(2.0);
        let p = Vec3::new(0.3, 1.1, 1.7);
        let g = linear_initial_guess(&a, &a.ranges_to(p)).unwrap();
        assert!(g.distance(p) < 1e-9);
    }

    /// Coarse-to-fine exhaustive search over the cost, ending at 1 mm.
    fn grid_oracle(a: &AnchorSet, ranges: &[f64], lo: Vec3, hi: Vec3) -> Vec3 {
        let mut best = (f64::INFINITY, lo);
        let steps = 20;
        let span = hi - lo;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let p = lo + Vec3::new(span.x * i as f64, span.y * j as f64, span.z * k as f64) / steps as f64;
                    let c = cost(a, ranges, p);
                    if c < best.0 {
                        best = (c, p);
                    }
                }
            }
        }
        for h in [0.01, 0.001] {
            let centre = best.1;
            for i in -10..=10 {
                for j in -10..=10 {
                    for k in -10..=10 {
                        let p = centre + Vec3::new(i as f64, j as f64, k as f64) * h;
                        let c = cost(a, ranges, p);
                        if c < best.0 {
                            best = (c, p);
                        }
                    }
                }
            }
        }
        best.1
    }

    #[test]
    fn noisy_rmse_close_to_oracle() {
        let a = cube_anchors(2.0);
        let model = RangingModel { sigma: 0.05, bias_slope: 0.0, ..RangingModel::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 40;
        let (mut gn, mut oracle) = (0.0, 0.0);
        for _ in 0..trials {
            let p = Vec3::new(rng.random_range(0.2..1.8), rng.random_range(0.2..1.8), rng.random_range(0.2..1.8));
            let ranges: Vec<f64> = a
                .ranges_to(p)
                .into_iter()
                .map(|d| simulate_range(&model, d, &mut rng).unwrap())
                .collect();
            let est = trilaterate(&a, &ranges, None).unwrap();
            gn += est.position.distance(p).powi(2);
            let o = grid_oracle(&a, &ranges, Vec3::splat(-0.5), Vec3::splat(2.5));
            oracle += o.distance(p).powi(2);
        }
        let (gn, oracle) = ((gn / trials as f64).sqrt(), (oracle / trials as f64).sqrt());
        assert!(gn <= 2.0 * oracle, "gn {gn} oracle {oracle}");
    }

    #[test]
    fn polar_examples() {
        let o = PolarObservation { distance: 1.0, bearing: 0.0 };
        assert_eq!(relative_localize_step(&o, &o), Vec3::ZERO);
        let d = PolarObservation { distance: 0.5, bearing: 0.0 };
        assert!((relative_localize_step(&o, &d) - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        let obs = PolarObservation { distance: 1.0, bearing: FRAC_PI_2 };
        assert!((relative_localize_step(&obs, &o) - Vec3::new(-1.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn noisy_relative_correction_stays_near_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = 0.05;
        let noise = Normal::new(0.0, sigma).unwrap();
        let anchor = Vec3::new(1.0, 1.0, 0.5);
        let desired = PolarObservation { distance: 0.6, bearing: 0.8 };
        let goal = anchor - desired.to_vec();
        let mut observer = Vec3::new(-1.0, 2.0, 0.5);
        let mut sq = 0.0;
        let n = 2000;
        for _ in 0..n {
            let mut obs = PolarObservation::observe(observer, anchor);
            obs.distance = (obs.distance + noise.sample(&mut rng)).max(0.0);
            observer += relative_localize_step(&obs, &desired);
            sq += (observer - goal).norm_squared();
        }
        let rms = (sq / n as f64).sqrt();
        // After each step the error equals the last range noise, projected
        // on the bearing.
        assert!(rms <= 1.5 * sigma, "{rms}");
    }

    proptest! {
        #[test]
        fn zero_noise_round_trip(x in 0.05..1.95f64, y in 0.05..1.95f64, z in 0.05..1.95f64) {
            let a = cube_anchors(2.0);
            let p = Vec3::new(x, y, z);
            let est = trilaterate(&a, &a.ranges_to(p), None).unwrap();
            prop_assert!(est.position.distance(p) < 1e-6);
        }

        #[test]
        fn gradient_vanishes_at_estimate(
            x in 0.1..1.9f64, y in 0.1..1.9f64, z in 0.1..1.9f64, seed in 0u64..1000,
        ) {
            let a = cube_anchors(2.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = RangingModel { sigma: 0.05, bias_slope: 0.0, ..RangingModel::default() };
            let ranges: Vec<f64> = a.ranges_to(Vec3::new(x, y, z)).into_iter()
                .map(|d| simulate_range(&m, d, &mut rng).unwrap()).collect();
            let est = trilaterate(&a, &ranges, None).unwrap();
            prop_assert!(cost_gradient(&a, &ranges, est.position).norm() < 1e-6);
        }

        #[test]
        fn one_step_with_exact_observations(
            ox in -2.0..2.0f64, oy in -2.0..2.0f64, dist in 0.1..2.0f64, bearing in -3.1..3.1f64,
        ) {
            let anchor = Vec3::new(0.3, -0.2, 1.0);
            let desired = PolarObservation { distance: dist, bearing };
            let observer = Vec3::new(ox, oy, 1.0);
            let moved = observer + relative_localize_step(&PolarObservation::observe(observer, anchor), &desired);
            let after = PolarObservation::observe(moved, anchor);
            prop_assert!((after.to_vec() - desired.to_vec()).norm() < 1e-9);
        }
    }
}
