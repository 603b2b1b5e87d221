//! Encountered-type haptic rendering.
//!
//! A virtual object answers penetration queries; the rendered force is a
//! spring-damper along the outward surface normal. Several FLSs can combine
//! their forces either side by side (parallel contacts, each displaced on its
//! own) or stacked behind a single contact (series, one shared displacement).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControllerGains, Vec3};

/// Forces strictly below this magnitude are perceived through the skin.
pub const TACTILE_THRESHOLD_N: f64 = 1.0;

const SERIES_DISPLACEMENT_TOL: f64 = 1e-9;
const MESH_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HapticsError {
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error("non-finite query point")]
    NonFinite,
    #[error("chain mode is {actual:?}, expected {expected:?}")]
    WrongMode { expected: ChainMode, actual: ChainMode },
    #[error("series members have different displacements")]
    InconsistentDisplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    HalfSpace { point: Vec3, normal: Vec3 },
    Sphere { center: Vec3, radius: f64 },
    /// Closed convex triangle mesh; faces index into `vertices`.
    TriangleMesh { vertices: Vec<Vec3>, faces: Vec<[usize; 3]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualObject {
    #[serde(flatten)]
    pub shape: Shape,
    /// Replaces the controller's `kp` when rendering this object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<f64>,
}

impl VirtualObject {
    pub fn half_space(point: Vec3, normal: Vec3) -> Result<Self, HapticsError> {
        let obj = Self {
            shape: Shape::HalfSpace { point, normal },
            stiffness: None,
        };
        obj.validated()
    }

    pub fn sphere(center: Vec3, radius: f64) -> Result<Self, HapticsError> {
        Self {
            shape: Shape::Sphere { center, radius },
            stiffness: None,
        }
        .validated()
    }

    pub fn convex_mesh(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, HapticsError> {
        Self {
            shape: Shape::TriangleMesh { vertices, faces },
            stiffness: None,
        }
        .validated()
    }

    pub fn with_stiffness(mut self, kp: f64) -> Self {
        self.stiffness = Some(kp);
        self
    }

    /// Checks invariants and normalizes a half-space normal.
    pub fn validated(mut self) -> Result<Self, HapticsError> {
        match &mut self.shape {
            Shape::HalfSpace { point, normal } => {
                if !point.is_finite() {
                    return Err(HapticsError::InvalidObject("half-space point not finite".into()));
                }
                *normal = normal
                    .try_normalize(1e-12)
                    .filter(|n| n.is_finite())
                    .ok_or_else(|| HapticsError::InvalidObject("half-space normal is zero".into()))?;
            }
            Shape::Sphere { center, radius } => {
                if !(center.is_finite() && *radius > 0.0 && radius.is_finite()) {
                    return Err(HapticsError::InvalidObject(format!("sphere radius {radius}")));
                }
            }
            Shape::TriangleMesh { vertices, faces } => {
                mesh_planes(vertices, faces)?;
            }
        }
        if let Some(k) = self.stiffness {
            if !(k > 0.0 && k.is_finite()) {
                return Err(HapticsError::InvalidObject(format!("stiffness {k}")));
            }
        }
        Ok(self)
    }

    /// Gains to render this object with.
    pub fn effective_gains(&self, gains: &ControllerGains) -> ControllerGains {
        ControllerGains {
            kp: self.stiffness.unwrap_or(gains.kp),
            ..*gains
        }
    }
}

/// Outward unit normal and offset of each face plane (`n·x = offset` on the
/// face, `n·x < offset` inside).
fn mesh_planes(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<(Vec3, f64)>, HapticsError> {
    if vertices.len() < 4 || faces.len() < 4 {
        return Err(HapticsError::DegenerateMesh("fewer than 4 vertices or faces".into()));
    }
    if vertices.iter().any(|v| !v.is_finite()) {
        return Err(HapticsError::DegenerateMesh("non-finite vertex".into()));
    }
    let centroid = vertices.iter().copied().sum::<Vec3>() / vertices.len() as f64;

    let mut edges = std::collections::BTreeMap::<(usize, usize), usize>::new();
    let mut planes = Vec::with_capacity(faces.len());
    for (fi, face) in faces.iter().enumerate() {
        if face.iter().any(|&i| i >= vertices.len()) {
            return Err(HapticsError::DegenerateMesh(format!("face {fi} indexes past the vertex list")));
        }
        let [a, b, c] = face.map(|i| vertices[i]);
        let n = (b - a)
            .cross(c - a)
            .try_normalize(MESH_TOL)
            .ok_or_else(|| HapticsError::DegenerateMesh(format!("face {fi} has zero area")))?;
        // Orient outward regardless of winding.
        let n = if n.dot(a - centroid) < 0.0 { -n } else { n };
        let offset = n.dot(a);
        if vertices.iter().any(|v| n.dot(*v) - offset > MESH_TOL) {
            return Err(HapticsError::DegenerateMesh(format!("mesh is not convex at face {fi}")));
        }
        if vertices.iter().all(|v| n.dot(*v) - offset > -MESH_TOL) {
            return Err(HapticsError::DegenerateMesh("mesh has no volume".into()));
        }
        planes.push((n, offset));
        for (i, j) in [(face[0], face[1]), (face[1], face[2]), (face[2], face[0])] {
            *edges.entry((i.min(j), i.max(j))).or_default() += 1;
        }
    }
    if edges.values().any(|&count| count != 2) {
        return Err(HapticsError::DegenerateMesh("mesh is not closed".into()));
    }
    Ok(planes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactReport {
    /// Penetration depth, m. Zero when outside.
    pub depth: f64,
    /// Outward unit normal at the nearest surface point.
    pub normal: Vec3,
    pub touching: bool,
}

impl ContactReport {
    fn new(depth: f64, normal: Vec3) -> Self {
        let depth = depth.max(0.0);
        Self {
            depth,
            normal,
            touching: depth > 0.0,
        }
    }
}

/// How far `p` is inside `obj`.
pub fn penetration(obj: &VirtualObject, p: Vec3) -> Result<ContactReport, HapticsError> {
    if !p.is_finite() {
        return Err(HapticsError::NonFinite);
    }
    Ok(match &obj.shape {
        Shape::HalfSpace { point, normal } => ContactReport::new(-(p - *point).dot(*normal), *normal),
        Shape::Sphere { center, radius } => {
            let offset = p - *center;
            let normal = offset.try_normalize(1e-15).unwrap_or(Vec3::Z);
            ContactReport::new(radius - offset.norm(), normal)
        }
        Shape::TriangleMesh { vertices, faces } => {
            let planes = mesh_planes(vertices, faces)?;
            // Signed distance to the closest face plane (negative inside).
            let (normal, signed) = planes
                .iter()
                .map(|&(n, off)| (n, n.dot(p) - off))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("mesh has faces");
            ContactReport::new(-signed, normal)
        }
    })
}

/// Spring-damper force pushing the probe out of the surface. Only motion
/// into the surface is damped, so the object never pulls the probe in.
pub fn render_force(report: &ContactReport, rate_into_surface: f64, gains: &ControllerGains) -> Vec3 {
    if !report.touching {
        return Vec3::ZERO;
    }
    report.normal * (gains.kp * report.depth + gains.kd * rate_into_surface.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainMode {
    Parallel,
    Series,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainMember {
    pub fls: u32,
    /// Displacement from the member's set-point, m.
    pub displacement: Vec3,
    pub displacement_rate: Vec3,
    pub gains: ControllerGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactChain {
    pub mode: ChainMode,
    pub members: Vec<ChainMember>,
}

impl ContactChain {
    pub fn parallel(members: Vec<ChainMember>) -> Self {
        Self { mode: ChainMode::Parallel, members }
    }

    pub fn series(members: Vec<ChainMember>) -> Self {
        Self { mode: ChainMode::Series, members }
    }

    /// Force felt by the user for either mode.
    pub fn force(&self) -> Result<Vec3, HapticsError> {
        match self.mode {
            ChainMode::Parallel => combine_parallel(self),
            ChainMode::Series => combine_series(self),
        }
    }
}

/// Each member pushes with its own displacement: the forces add as vectors.
pub fn combine_parallel(chain: &ContactChain) -> Result<Vec3, HapticsError> {
    if chain.mode != ChainMode::Parallel {
        return Err(HapticsError::WrongMode { expected: ChainMode::Parallel, actual: chain.mode });
    }
    Ok(chain
        .members
        .iter()
        .map(|m| m.displacement * m.gains.kp + m.displacement_rate * m.gains.kd)
        .sum())
}

/// One contact, every member displaced by the same amount: the stiffnesses
/// and dampings add.
pub fn combine_series(chain: &ContactChain) -> Result<Vec3, HapticsError> {
    if chain.mode != ChainMode::Series {
        return Err(HapticsError::WrongMode { expected: ChainMode::Series, actual: chain.mode });
    }
    let Some(first) = chain.members.first() else {
        return Ok(Vec3::ZERO);
    };
    let (d, d_rate) = (first.displacement, first.displacement_rate);
    if chain.members.iter().any(|m| {
        (m.displacement - d).norm() > SERIES_DISPLACEMENT_TOL
            || (m.displacement_rate - d_rate).norm() > SERIES_DISPLACEMENT_TOL
    }) {
        return Err(HapticsError::InconsistentDisplacement);
    }
    let kp: f64 = chain.members.iter().map(|m| m.gains.kp).sum();
    let kd: f64 = chain.members.iter().map(|m| m.gains.kd).sum();
    Ok(d * kp + d_rate * kd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    Tactile,
    Kinesthetic,
}

pub fn classify_feedback(force: Vec3) -> Feedback {
    if force.norm() < TACTILE_THRESHOLD_N {
        Feedback::Tactile
    } else {
        Feedback::Kinesthetic
    }
}

/// Presence-of-touch proxy: the FLS has been pushed off its set-point by
/// more than `threshold`.
pub fn detect_touch(fls_displacement: Vec3, threshold: f64) -> bool {
    fls_displacement.norm() > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    pub position: Vec3,
}

/// Scripted, quasi-static user hand.
#[derive(Debug, Clone, PartialEq)]
pub struct HandProbe {
    pub time: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    script: Vec<Waypoint>,
}

impl HandProbe {
    pub fn new(script: Vec<Waypoint>) -> Result<Self, HapticsError> {
        if script.is_empty() {
            return Err(HapticsError::InvalidObject("hand script is empty".into()));
        }
        if script.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(HapticsError::InvalidObject("waypoint times must strictly increase".into()));
        }
        let start = script[0].position;
        Ok(Self {
            time: script[0].time,
            position: start,
            velocity: Vec3::ZERO,
            script,
        })
    }

    pub fn script(&self) -> &[Waypoint] {
        &self.script
    }

    /// Scripted position at `t`, linearly interpolated and held at the ends.
    pub fn scripted_position(&self, t: f64) -> Vec3 {
        let s = &self.script;
        let idx = s.partition_point(|w| w.time <= t);
        if idx == 0 {
            return s[0].position;
        }
        if idx == s.len() {
            return s[s.len() - 1].position;
        }
        let (a, b) = (s[idx - 1], s[idx]);
        let f = (t - a.time) / (b.time - a.time);
        a.position + (b.position - a.position) * f
    }
}

/// Advances the hand by `dt`: it follows its script and is pushed back by
/// `compliance·reaction_force`.
pub fn hand_probe_step(probe: &HandProbe, reaction_force: Vec3, compliance: f64, dt: f64) -> HandProbe {
    let time = probe.time + dt;
    let position = probe.scripted_position(time) + reaction_force * compliance;
    HandProbe {
        time,
        position,
        velocity: (position - probe.position) / dt,
        script: probe.script.clone(),
    }
}
