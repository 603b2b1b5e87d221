//! Swarm behaviors: target assignment, potential-field guidance, circle
//! paths, heartbeat failure handling and the battery/charging lifecycle.

mod agents;
mod apf;
mod assignment;
mod circle;
mod lifecycle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{KinematicState, Vec3};

pub use agents::{
    fls_actor, Behavior, Body, FlsAgent, FlsSetup, HandState, HapticSample, Hub, Message, SwarmEffect, World,
    HEARTBEAT_TIMER, LOCALIZE_TIMER, SWEEP_TIMER,
};
pub use apf::{apf_velocity, reactive_avoid};
pub use assignment::{assign_targets, brute_force_assignment, Assignment, HUNGARIAN_LIMIT};
pub use circle::{circle_waypoint, CirclePlane};
pub use lifecycle::{
    charging_tick, process_heartbeats, travel_time_estimate, HeartbeatOutcome, HubEntry, Registry,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwarmError {
    #[error("{fls} FLSs cannot cover {targets} targets")]
    NotEnoughFls { fls: usize, targets: usize },
    #[error("neighbor coincides with FLS position")]
    NeighborCoincident,
    #[error("illegal role transition {from} -> {to}")]
    IllegalTransition { from: Role, to: Role },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Illuminating,
    Standby,
    ToCharger,
    Charging,
    Failed,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Illuminating,
        Role::Standby,
        Role::ToCharger,
        Role::Charging,
        Role::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Illuminating => "illuminating",
            Role::Standby => "standby",
            Role::ToCharger => "to_charger",
            Role::Charging => "charging",
            Role::Failed => "failed",
        }
    }

    pub fn can_transition(self, to: Role) -> bool {
        use Role::*;
        matches!(
            (self, to),
            (Illuminating, ToCharger | Failed)
                | (ToCharger, Charging | Failed)
                | (Charging, Standby)
                | (Standby, Illuminating | Failed)
        )
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Default for Rgb {
    fn default() -> Self {
        Rgb(255, 255, 255)
    }
}

/// Full state of one FLS.
#[derive(Debug, Clone, PartialEq)]
pub struct FlsRecord {
    pub id: u32,
    pub kinematics: KinematicState,
    pub role: Role,
    /// Seconds of flight remaining.
    pub battery: f64,
    pub target: Option<Vec3>,
    pub color: Rgb,
    /// Resting on a pad (hangar or charger); docked FLSs do not drain.
    pub docked: bool,
}

impl FlsRecord {
    pub fn airborne(&self) -> bool {
        !self.docked && self.role != Role::Failed
    }

    /// Moves to `to`, rejecting transitions outside the role machine.
    pub fn transition(&mut self, to: Role) -> Result<Role, SwarmError> {
        let from = self.role;
        if !from.can_transition(to) {
            return Err(SwarmError::IllegalTransition { from, to });
        }
        self.role = to;
        if to != Role::Illuminating {
            self.target = None;
        }
        Ok(from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApfParams {
    /// 1/s
    pub k_att: f64,
    /// m³/s
    pub k_rep: f64,
    /// Influence radius of the repulsive field, m.
    pub d0: f64,
    pub safety_radius: f64,
    pub v_max: f64,
}

impl Default for ApfParams {
    fn default() -> Self {
        Self {
            k_att: 2.0,
            k_rep: 0.005,
            d0: 0.5,
            safety_radius: 0.1,
            v_max: 1.0,
        }
    }
}

impl ApfParams {
    pub fn validate(&self) -> Result<(), SwarmError> {
        let ok = self.k_att > 0.0
            && self.k_rep >= 0.0
            && self.d0 > self.safety_radius
            && self.safety_radius > 0.0
            && self.v_max > 0.0
            && [self.k_att, self.k_rep, self.d0, self.v_max].iter().all(|v| v.is_finite());
        ok.then_some(()).ok_or_else(|| SwarmError::InvalidParams(format!("{self:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChargingPolicy {
    /// Battery-seconds used per second of flight.
    pub drain_rate: f64,
    /// Battery-seconds gained per second on the charger.
    pub recharge_rate: f64,
    pub reserve: f64,
    pub charger_position: Vec3,
    pub full_battery: f64,
    /// Distance from the pad within which an FLS counts as docked, m.
    pub dock_tolerance: f64,
}

impl Default for ChargingPolicy {
    fn default() -> Self {
        Self {
            drain_rate: 1.0,
            recharge_rate: 2.0,
            reserve: 60.0,
            charger_position: Vec3::new(0.0, -0.5, 0.0),
            full_battery: 600.0,
            dock_tolerance: 0.1,
        }
    }
}

impl ChargingPolicy {
    pub fn validate(&self) -> Result<(), SwarmError> {
        let ok = self.drain_rate > 0.0
            && self.recharge_rate > 0.0
            && self.reserve > 0.0
            && self.full_battery > self.reserve
            && self.full_battery.is_finite()
            && self.dock_tolerance > 0.0
            && self.charger_position.is_finite();
        ok.then_some(()).ok_or_else(|| SwarmError::InvalidParams(format!("{self:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeartbeatPolicy {
    pub period: f64,
    pub miss_limit: u32,
}

impl Default for HeartbeatPolicy {
    fn default() -> Self {
        Self { period: 0.5, miss_limit: 3 }
    }
}

impl HeartbeatPolicy {
    pub fn validate(&self) -> Result<(), SwarmError> {
        (self.period > 0.0 && self.period.is_finite() && self.miss_limit >= 1)
            .then_some(())
            .ok_or_else(|| SwarmError::InvalidParams(format!("{self:?}")))
    }

    /// Silence after which an FLS is declared failed.
    pub fn timeout(&self) -> f64 {
        self.miss_limit as f64 * self.period
    }
}
