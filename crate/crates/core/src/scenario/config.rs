//! Scenario files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{CalibrationCurve, ControllerGains, DownwashParams, MotionLimits, Vec3};
use crate::haptics::{Shape, VirtualObject};
use crate::localization::{AnchorSet, RangingModel};
use crate::swarm::{ApfParams, ChargingPolicy, CirclePlane, HeartbeatPolicy};
use crate::transport::NetworkConfig;

use super::pointcloud::{downsample, load_pointcloud, sphere_cloud, PointCloud, SyntheticSphere};
use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PointCloudRender,
    CircleFormation,
    HapticWallPress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guidance {
    /// Potential field computed per FLS from all neighbor positions.
    #[default]
    Apf,
    /// Straight-line command plus locally sensed repulsion.
    Reactive,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub gains: ControllerGains,
    pub limits: MotionLimits,
    pub downwash: DownwashParams,
    pub calibration: Option<CalibrationCurve>,
    /// Pass commanded forces through the noisy thrust calibration.
    pub thrust_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub model: RangingModel,
    pub anchors: Vec<Vec3>,
    /// Interval between localization fixes, s. Absent disables them.
    pub epoch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmConfig {
    /// FLSs launched from random positions; defaults to the target count.
    pub illuminating: Option<usize>,
    /// FLSs waiting on their pads.
    pub standby: usize,
    pub start_min: Vec3,
    pub start_max: Vec3,
    /// Minimum distance between random start positions, m.
    pub start_spacing: f64,
    pub guidance: Guidance,
    pub apf: ApfParams,
    pub heartbeat: HeartbeatPolicy,
    pub charging: ChargingPolicy,
    /// Enables low-battery trips to the charger.
    pub lifecycle: bool,
    /// Pads form a grid along +x and −y from the charger position, m apart.
    pub pad_spacing: f64,
    /// Log position of failed FLSs (a row along +y from here).
    pub terminus: Vec3,
    /// FLS `i` of `n` starts with `full·(1 − stagger·i/n)` battery.
    pub battery_stagger: f64,
    /// A target counts as covered when its FLS is this close, m.
    pub cover_tolerance: f64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            illuminating: None,
            standby: 0,
            start_min: Vec3::ZERO,
            start_max: Vec3::splat(4.0),
            start_spacing: 0.3,
            guidance: Guidance::Apf,
            apf: ApfParams::default(),
            heartbeat: HeartbeatPolicy::default(),
            charging: ChargingPolicy::default(),
            lifecycle: true,
            pad_spacing: 0.6,
            terminus: Vec3::new(-1.0, 0.0, 0.0),
            battery_stagger: 0.0,
            cover_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointCloudConfig {
    /// XYZRGB or ASCII PLY file, relative to the scenario file.
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSphere>,
    /// Number of targets after downsampling.
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub fls: u32,
    pub at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircleConfig {
    pub count: usize,
    pub radius: f64,
    pub speed: f64,
    pub plane: CirclePlane,
    pub center: Vec3,
}

impl Default for CircleConfig {
    fn default() -> Self {
        Self {
            count: 3,
            radius: 0.5,
            speed: 1.0,
            plane: CirclePlane::Xy,
            center: Vec3::splat(2.0),
        }
    }
}

impl CircleConfig {
    pub fn period(&self) -> f64 {
        std::f64::consts::TAU * self.radius / self.speed
    }

    /// Evenly spaced phases.
    pub fn phase(&self, i: usize) -> f64 {
        std::f64::consts::TAU * i as f64 / self.count as f64
    }
}

/// Scripted press of a hand against the first object (a half-space).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HapticConfig {
    /// FLS set-point; defaults to the wall's anchor point.
    pub setpoint: Option<Vec3>,
    /// Hand start height above the wall, m.
    pub approach_from: f64,
    /// Time the hand starts moving in, s.
    pub press_start: f64,
    /// Time to reach full depth, s.
    pub press_time: f64,
    /// Depth of the press below the set-point, m.
    pub depth: f64,
    /// Time held at full depth, s.
    pub hold: f64,
    /// Time to pull the hand back out, s.
    pub retract: f64,
    /// Hand displacement per newton of reaction, m/N.
    pub compliance: f64,
    pub touch_threshold: f64,
}

impl Default for HapticConfig {
    fn default() -> Self {
        Self {
            setpoint: None,
            approach_from: 0.3,
            press_start: 0.5,
            press_time: 0.5,
            depth: 0.1,
            hold: 2.0,
            retract: 0.02,
            compliance: 0.0,
            touch_threshold: 0.01,
        }
    }
}

impl HapticConfig {
    pub fn release_time(&self) -> f64 {
        self.press_start + self.press_time + self.hold
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration: f64,
    pub dt: f64,
    pub mode: Mode,
    /// Write every n-th tick to the trajectory log.
    #[serde(default = "one")]
    pub log_every: usize,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub localization: LocalizationConfig,
    #[serde(default)]
    pub swarm: SwarmConfig,
    #[serde(default)]
    pub objects: Vec<VirtualObject>,
    #[serde(default)]
    pub pointcloud: PointCloudConfig,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub circle: CircleConfig,
    #[serde(default)]
    pub haptic: HapticConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn invalid(detail: impl Into<String>) -> ScenarioError {
    ScenarioError::ConfigInvalid(detail.into())
}

impl ScenarioConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            seed: 0,
            duration: 10.0,
            dt: 0.01,
            mode,
            log_every: 1,
            network: NetworkConfig::default(),
            dynamics: DynamicsConfig::default(),
            localization: LocalizationConfig::default(),
            swarm: SwarmConfig::default(),
            objects: Vec::new(),
            pointcloud: PointCloudConfig::default(),
            faults: Vec::new(),
            circle: CircleConfig::default(),
            haptic: HapticConfig::default(),
            base_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Number of FLSs in the run.
    pub fn fls_count(&self) -> Result<usize, ScenarioError> {
        Ok(match self.mode {
            Mode::PointCloudRender => {
                self.swarm.illuminating.unwrap_or(self.pointcloud.n) + self.swarm.standby
            }
            Mode::CircleFormation => self.circle.count,
            Mode::HapticWallPress => 1,
        })
    }

    /// The downsampled target cloud (render mode only).
    pub fn targets(&self) -> Result<PointCloud, ScenarioError> {
        let pc = &self.pointcloud;
        let cloud = match (&pc.path, &pc.synthetic) {
            (Some(path), None) => {
                let full = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                load_pointcloud(&full).map_err(|e| invalid(format!("pointcloud {}: {e}", full.display())))?
            }
            (None, Some(s)) => sphere_cloud(s),
            (Some(_), Some(_)) => return Err(invalid("pointcloud: give either path or synthetic, not both")),
            (None, None) => return Err(invalid("pointcloud: path or synthetic required")),
        };
        Ok(downsample(&cloud, pc.n, self.seed))
    }

    pub fn anchors(&self) -> Result<Option<AnchorSet>, ScenarioError> {
        if self.localization.epoch.is_none() {
            return Ok(None);
        }
        AnchorSet::from_positions(&self.localization.anchors)
            .map(Some)
            .map_err(|e| invalid(format!("localization: {e}")))
    }

    pub fn wall(&self) -> Result<VirtualObject, ScenarioError> {
        match self.objects.first() {
            Some(o @ VirtualObject { shape: Shape::HalfSpace { .. }, .. }) => {
                o.clone().validated().map_err(|e| invalid(format!("objects[0]: {e}")))
            }
            _ => Err(invalid("haptic_wall_press needs a half_space as the first object")),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid(format!("duration = {}", self.duration)));
        }
        if !(self.dt > 0.0 && self.dt <= self.duration) {
            return Err(invalid(format!("dt = {}", self.dt)));
        }
        if self.log_every == 0 {
            return Err(invalid("log_every must be ≥ 1"));
        }
        self.network.validate().map_err(|e| invalid(e.to_string()))?;
        let d = &self.dynamics;
        d.gains.validate().map_err(|e| invalid(e.to_string()))?;
        d.limits.validate().map_err(|e| invalid(e.to_string()))?;
        if !(d.downwash.k >= 0.0 && (0.0..std::f64::consts::FRAC_PI_2).contains(&d.downwash.half_angle)) {
            return Err(invalid(format!("downwash {:?}", d.downwash)));
        }
        self.localization.model.validate().map_err(|e| invalid(e.to_string()))?;
        if let Some(epoch) = self.localization.epoch {
            if !(epoch > 0.0) {
                return Err(invalid(format!("localization.epoch = {epoch}")));
            }
            self.anchors()?;
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.clone().validated().map_err(|e| invalid(format!("objects[{i}]: {e}")))?;
        }
        let s = &self.swarm;
        s.apf.validate().map_err(|e| invalid(e.to_string()))?;
        s.heartbeat.validate().map_err(|e| invalid(e.to_string()))?;
        s.charging.validate().map_err(|e| invalid(e.to_string()))?;
        if !(0.0..1.0).contains(&s.battery_stagger) {
            return Err(invalid(format!("battery_stagger = {}", s.battery_stagger)));
        }
        let n = self.fls_count()?;
        for f in &self.faults {
            if f.fls as usize >= n {
                return Err(invalid(format!("fault names FLS {} but there are {n}", f.fls)));
            }
            if !(f.at >= 0.0) {
                return Err(invalid(format!("fault time {}", f.at)));
            }
        }
        match self.mode {
            Mode::PointCloudRender => {
                if self.pointcloud.n == 0 {
                    return Err(invalid("pointcloud.n must be ≥ 1"));
                }
                if n == 0 {
                    return Err(invalid("no FLSs"));
                }
                let lo = s.start_min;
                let hi = s.start_max;
                if !(lo.x < hi.x && lo.y < hi.y && lo.z < hi.z) {
                    return Err(invalid("start_min must be below start_max"));
                }
                if !(s.start_spacing >= 0.0) || !(s.pad_spacing > 0.0) || !(s.cover_tolerance > 0.0) {
                    return Err(invalid("spacings must be positive"));
                }
                let targets = self.targets()?;
                if targets.len() < self.pointcloud.n {
                    return Err(invalid(format!(
                        "pointcloud has {} points, fewer than n = {}",
                        targets.len(),
                        self.pointcloud.n
                    )));
                }
            }
            Mode::CircleFormation => {
                let c = &self.circle;
                if c.count == 0 || !(c.radius > 0.0) || !(c.speed > 0.0) || !c.center.is_finite() {
                    return Err(invalid(format!("circle {c:?}")));
                }
            }
            Mode::HapticWallPress => {
                self.wall()?;
                let h = &self.haptic;
                let ok = h.approach_from > 0.0
                    && h.press_start >= 0.0
                    && h.press_time > 0.0
                    && h.depth >= 0.0
                    && h.hold >= 0.0
                    && h.retract > 0.0
                    && h.compliance >= 0.0
                    && h.touch_threshold > 0.0;
                if !ok {
                    return Err(invalid(format!("haptic {h:?}")));
                }
            }
        }
        Ok(())
    }
}
