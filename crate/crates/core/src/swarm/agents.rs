//! FLS and hub actors.
//!
//! Every tick the driver publishes a [`World`] snapshot (positions of all
//! FLSs at the start of the tick) and enqueues one `Tick` per live FLS. Each
//! FLS reads the snapshot, steps its own dynamics and reports its new state
//! as a [`SwarmEffect`]; no FLS ever sees another's mid-tick state, so the
//! update order cannot leak into the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    downwash_accel, enforce_limits, pd_force, thrust_to_force, CalibrationCurve, ControllerGains,
    DownwashParams, KinematicState, MotionLimits, PositionController, Vec3, Violation,
};
use crate::haptics::{
    classify_feedback, detect_touch, penetration, render_force, Feedback, Shape, VirtualObject,
};
use crate::localization::{simulate_range, trilaterate, AnchorSet, RangingModel};
use crate::runtime::{Actor, Context, Event, EventKind, HandlerError};
use crate::transport::ActorId;

use super::{
    apf_velocity, charging_tick, circle_waypoint, process_heartbeats, reactive_avoid,
    travel_time_estimate, ApfParams, ChargingPolicy, CirclePlane, FlsRecord, HeartbeatPolicy,
    Registry, Role, SwarmError,
};

pub const HEARTBEAT_TIMER: &str = "heartbeat";
pub const SWEEP_TIMER: &str = "sweep";
pub const LOCALIZE_TIMER: &str = "localize";

const ROLE_STATES: &[&str] = &["illuminating", "standby", "to_charger", "charging", "failed"];

/// Actor id of FLS `fls`; the hub is actor 0.
pub fn fls_actor(fls: u32) -> ActorId {
    ActorId(fls + 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub fls: u32,
    pub position: Vec3,
    pub velocity: Vec3,
    /// Docked FLSs are still obstacles but do not produce downwash.
    pub airborne: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandState {
    pub position: Vec3,
    pub velocity: Vec3,
}

/// Read-only snapshot handed to every handler during one tick.
#[derive(Debug, Clone, Default)]
pub struct World {
    pub dt: f64,
    /// Non-failed FLSs in ascending id order.
    pub bodies: Vec<Body>,
    /// Where the user's hand will be at the end of this tick.
    pub hand: Option<HandState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Heartbeat {
        fls: u32,
        role: Role,
        target: Option<usize>,
        position: Vec3,
        battery: f64,
    },
    Assign { target: usize, position: Vec3 },
    Release,
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("message serializes")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HapticSample {
    pub fls: u32,
    /// How far the hand is inside the virtual object, m.
    pub depth: f64,
    /// FLS offset from its set-point, m.
    pub displacement: Vec3,
    /// Force the FLS exerts on the hand, N.
    pub force: Vec3,
    /// Reference force from the rendering law at the same depth, N.
    pub rendered: Vec3,
    pub feedback: Feedback,
    pub touch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SwarmEffect {
    State { record: FlsRecord, target_index: Option<usize> },
    RoleChange { fls: u32, from: Role, to: Role, reason: String },
    Violation { fls: u32, kind: Violation },
    Haptic(HapticSample),
    Localized { fls: u32, estimate: Vec3, error: f64, residual: f64 },
    HubFailed { fls: u32 },
    HubAssigned { fls: u32, target: usize },
    HubUncovered { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    /// Fly to an assigned target under potential-field guidance, with the
    /// standby/charging lifecycle.
    Render {
        apf: ApfParams,
        reactive: bool,
        /// Hangar and charging pad of this FLS.
        pad: Vec3,
        charging: ChargingPolicy,
        lifecycle: bool,
    },
    Circle {
        radius: f64,
        speed: f64,
        plane: CirclePlane,
        phase: f64,
        center: Vec3,
    },
    /// Hold a set-point on the surface of a half-space wall and push back
    /// against the hand.
    WallPress {
        setpoint: Vec3,
        wall: VirtualObject,
        touch_threshold: f64,
    },
}

#[derive(Debug, Clone)]
pub struct FlsSetup {
    pub record: FlsRecord,
    pub target_index: Option<usize>,
    pub behavior: Behavior,
    pub gains: ControllerGains,
    pub limits: MotionLimits,
    pub downwash: DownwashParams,
    pub hub: Option<(ActorId, HeartbeatPolicy)>,
    pub localization: Option<(RangingModel, AnchorSet, f64)>,
    pub thrust_curve: Option<CalibrationCurve>,
    pub seed: u64,
}

pub struct FlsAgent {
    record: FlsRecord,
    target_index: Option<usize>,
    behavior: Behavior,
    gains: ControllerGains,
    controller: PositionController,
    limits: MotionLimits,
    downwash: DownwashParams,
    hub: Option<(ActorId, HeartbeatPolicy)>,
    localization: Option<(RangingModel, AnchorSet, f64)>,
    thrust_curve: Option<CalibrationCurve>,
    rng: ChaCha8Rng,
}

type Ctx<'a> = Context<'a, World, SwarmEffect>;

fn failed(e: impl std::fmt::Display) -> HandlerError {
    HandlerError::Failed(e.to_string())
}

impl FlsAgent {
    pub fn new(setup: FlsSetup) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
        rng.set_stream(setup.record.id as u64 + 1);
        Self {
            controller: PositionController::new(setup.gains),
            record: setup.record,
            target_index: setup.target_index,
            behavior: setup.behavior,
            gains: setup.gains,
            limits: setup.limits,
            downwash: setup.downwash,
            hub: setup.hub,
            localization: setup.localization,
            thrust_curve: setup.thrust_curve,
            rng,
        }
    }

    pub fn record(&self) -> &FlsRecord {
        &self.record
    }

    fn change_role(&mut self, ctx: &mut Ctx, to: Role, reason: &str) -> Result<(), HandlerError> {
        let from = self.record.transition(to).map_err(failed)?;
        if to != Role::Illuminating {
            self.target_index = None;
        }
        ctx.emit(SwarmEffect::RoleChange {
            fls: self.record.id,
            from,
            to,
            reason: reason.to_string(),
        });
        self.heartbeat(ctx)
    }

    fn heartbeat(&mut self, ctx: &mut Ctx) -> Result<(), HandlerError> {
        let Some((hub, _)) = self.hub else {
            return Ok(());
        };
        let msg = Message::Heartbeat {
            fls: self.record.id,
            role: self.record.role,
            target: self.target_index,
            position: self.record.kinematics.position,
            battery: self.record.battery,
        };
        ctx.send(hub, &msg.encode())?;
        Ok(())
    }

    /// Applies thrust noise (if configured) to a commanded force.
    fn actuate(&mut self, force: Vec3) -> Result<Vec3, HandlerError> {
        let Some(curve) = &self.thrust_curve else {
            return Ok(force);
        };
        let mag = force.norm();
        if mag == 0.0 {
            return Ok(force);
        }
        let u = curve.thrust_for_force(mag);
        let actual = thrust_to_force(curve, u, Some(&mut self.rng)).map_err(failed)?;
        Ok(force * (actual / mag))
    }

    fn fly(&mut self, ctx: &mut Ctx, force: Vec3) -> Result<(), HandlerError> {
        let world = ctx.env();
        let dt = world.dt;
        let me = self.record.id;
        let above: Vec<Vec3> = world
            .bodies
            .iter()
            .filter(|b| b.fls != me && b.airborne)
            .map(|b| b.position)
            .collect();
        let mass = self.gains.mass;
        let dw = downwash_accel(
            self.record.kinematics.position,
            &above,
            &self.downwash,
            mass,
            self.limits.min_clearance,
        );
        let force = self.actuate(force)?;
        let (next, mut violations) = enforce_limits(
            self.record.kinematics,
            force / mass,
            dw.accel,
            &self.limits,
            mass,
            dt,
        )
        .map_err(failed)?;
        if dw.clearance_violation {
            violations.push(Violation::Clearance);
        }
        for kind in violations {
            ctx.emit(SwarmEffect::Violation { fls: me, kind });
        }
        self.record.kinematics = next;
        Ok(())
    }

    fn tick(&mut self, ctx: &mut Ctx, now: f64) -> Result<(), HandlerError> {
        if self.record.role == Role::Failed {
            return Ok(());
        }
        let dt = ctx.env().dt;
        let mut lifecycle = None;
        match self.behavior.clone() {
            Behavior::Render { apf, reactive, pad, charging, lifecycle: enabled } => {
                if self.record.airborne() {
                    let goal = match self.record.role {
                        Role::Illuminating => self.record.target.unwrap_or(pad),
                        _ => pad,
                    };
                    let me = self.record.id;
                    let pos = self.record.kinematics.position;
                    let neighbors: Vec<Vec3> = ctx
                        .env()
                        .bodies
                        .iter()
                        .filter(|b| b.fls != me)
                        .map(|b| b.position)
                        .collect();
                    let v_des = if reactive {
                        let cmd = ((goal - pos) * apf.k_att).clamp_norm(apf.v_max);
                        reactive_avoid(cmd, pos, &neighbors, &apf)
                    } else {
                        apf_velocity(pos, goal, &neighbors, &apf).map_err(|e| match e {
                            SwarmError::NeighborCoincident => failed("collision"),
                            other => failed(other),
                        })?
                    };
                    let force = pd_force(&self.gains, Vec3::ZERO, v_des - self.record.kinematics.velocity);
                    self.fly(ctx, force)?;
                    if self.record.role == Role::Standby
                        && self.record.kinematics.position.distance(pad) <= charging.dock_tolerance
                    {
                        self.record.docked = true;
                        self.record.kinematics = KinematicState::at_rest(pad);
                    }
                }
                let travel = if enabled {
                    travel_time_estimate(self.record.kinematics.position, pad, apf.v_max)
                } else {
                    f64::NEG_INFINITY
                };
                lifecycle = Some((ChargingPolicy { charger_position: pad, ..charging }, travel));
            }
            Behavior::Circle { radius, speed, plane, phase, center } => {
                let reference = circle_waypoint(radius, speed, plane, phase, now, center);
                self.record.target = Some(reference);
                let force = self.controller.update(reference - self.record.kinematics.position, dt);
                self.fly(ctx, force)?;
            }
            Behavior::WallPress { setpoint, wall, touch_threshold } => {
                self.wall_press(ctx, setpoint, &wall, touch_threshold)?;
            }
        }
        let (policy, travel) = lifecycle.unwrap_or((
            ChargingPolicy {
                charger_position: Vec3::splat(f64::INFINITY),
                ..ChargingPolicy::default()
            },
            f64::NEG_INFINITY,
        ));
        let (next, change) = charging_tick(&self.record, &policy, dt, travel);
        self.record.battery = next.battery;
        self.record.kinematics = next.kinematics;
        self.record.docked = next.docked;
        if let Some((_, to, reason)) = change {
            self.change_role(ctx, to, reason)?;
        }
        if self.record.role == Role::Failed {
            self.record.docked = false;
        }
        ctx.emit(SwarmEffect::State {
            record: self.record.clone(),
            target_index: self.target_index,
        });
        Ok(())
    }

    fn wall_press(
        &mut self,
        ctx: &mut Ctx,
        setpoint: Vec3,
        wall: &VirtualObject,
        touch_threshold: f64,
    ) -> Result<(), HandlerError> {
        let Shape::HalfSpace { point, normal } = wall.shape else {
            return Err(failed("wall press needs a half-space"));
        };
        let dt = ctx.env().dt;
        let hand = ctx.env().hand;
        self.record.target = Some(setpoint);
        let command = self.controller.update(setpoint - self.record.kinematics.position, dt);
        self.fly(ctx, command)?;

        let Some(hand) = hand else {
            return Ok(());
        };
        let s_hand = (hand.position - point).dot(normal);
        let s_fls = (self.record.kinematics.position - point).dot(normal);
        let in_contact = s_fls >= s_hand;
        if in_contact {
            let k = &mut self.record.kinematics;
            k.position -= normal * (s_fls - s_hand);
            let (vn, hn) = (k.velocity.dot(normal), hand.velocity.dot(normal));
            if vn > hn {
                k.velocity += normal * (hn - vn);
            }
        }
        // The FLS pushes on the hand only along the outward normal.
        let push = if in_contact { command.dot(normal).max(0.0) } else { 0.0 };
        let force = normal * push;
        let report = penetration(wall, hand.position).map_err(failed)?;
        let gains = wall.effective_gains(&self.gains);
        let rendered = render_force(&report, -hand.velocity.dot(normal), &gains);
        let displacement = self.record.kinematics.position - setpoint;
        ctx.emit(SwarmEffect::Haptic(HapticSample {
            fls: self.record.id,
            depth: report.depth,
            displacement,
            force,
            rendered,
            feedback: classify_feedback(force),
            touch: detect_touch(displacement, touch_threshold),
        }));
        Ok(())
    }

    fn localize(&mut self, ctx: &mut Ctx) -> Result<(), HandlerError> {
        let Some((model, anchors, _)) = &self.localization else {
            return Ok(());
        };
        let truth = self.record.kinematics.position;
        let mut ranges = Vec::with_capacity(anchors.len());
        for d in anchors.ranges_to(truth) {
            ranges.push(simulate_range(model, d.min(model.max_range), &mut self.rng).map_err(failed)?);
        }
        if let Ok(est) = trilaterate(anchors, &ranges, None) {
            ctx.emit(SwarmEffect::Localized {
                fls: self.record.id,
                estimate: est.position,
                error: est.position.distance(truth),
                residual: est.residual_rms,
            });
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Ctx, payload: &[u8]) -> Result<(), HandlerError> {
        // Malformed datagrams are dropped like any other network garbage.
        let Ok(msg) = Message::decode(payload) else {
            return Ok(());
        };
        match msg {
            Message::Assign { target, position } if self.record.role == Role::Standby => {
                self.record.target = Some(position);
                self.target_index = Some(target);
                self.record.docked = false;
                self.controller.reset();
                self.change_role(ctx, Role::Illuminating, "assigned")?;
            }
            Message::Release if self.record.role == Role::Illuminating => {
                self.change_role(ctx, Role::ToCharger, "released")?;
            }
            _ => {}
        }
        Ok(())
    }
}

impl Actor<World, SwarmEffect> for FlsAgent {
    fn handle(&mut self, event: &Event, ctx: &mut Ctx) -> Result<(), HandlerError> {
        match &event.kind {
            EventKind::Tick => self.tick(ctx, event.time),
            EventKind::TimerFired(tag) if tag == HEARTBEAT_TIMER => {
                if self.record.role == Role::Failed {
                    return Ok(());
                }
                self.heartbeat(ctx)?;
                if let Some((_, hp)) = self.hub {
                    ctx.schedule_timer(hp.period, HEARTBEAT_TIMER)?;
                }
                Ok(())
            }
            EventKind::TimerFired(tag) if tag == LOCALIZE_TIMER => {
                if self.record.role == Role::Failed {
                    return Ok(());
                }
                self.localize(ctx)?;
                if let Some((_, _, epoch)) = self.localization {
                    ctx.schedule_timer(epoch, LOCALIZE_TIMER)?;
                }
                Ok(())
            }
            EventKind::MessageDelivered(dg) if self.record.role != Role::Failed => {
                self.on_message(ctx, &dg.payload)
            }
            _ => Ok(()),
        }
    }

    fn state(&self) -> &'static str {
        self.record.role.as_str()
    }

    fn states(&self) -> &'static [&'static str] {
        ROLE_STATES
    }
}

/// Central coordinator: tracks heartbeats, detects silent FLSs and sends
/// standbys to uncovered targets.
pub struct Hub {
    registry: Registry,
    policy: HeartbeatPolicy,
}

impl Hub {
    pub fn new(registry: Registry, policy: HeartbeatPolicy) -> Self {
        Self { registry, policy }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    fn assign(&mut self, ctx: &mut Ctx, fls: u32, target: usize) -> Result<(), HandlerError> {
        let msg = Message::Assign { target, position: self.registry.targets[target] };
        ctx.send(fls_actor(fls), &msg.encode())?;
        Ok(())
    }

    fn sweep(&mut self, ctx: &mut Ctx) -> Result<(), HandlerError> {
        let now = ctx.now();
        let outcome = process_heartbeats(&mut self.registry, now, &self.policy);
        for &fls in &outcome.failed {
            ctx.emit(SwarmEffect::HubFailed { fls });
        }
        for &(fls, target) in &outcome.takeovers {
            ctx.emit(SwarmEffect::HubAssigned { fls, target });
            self.assign(ctx, fls, target)?;
        }
        if !outcome.uncovered.is_empty() {
            ctx.emit(SwarmEffect::HubUncovered { count: outcome.uncovered.len() });
        }
        // Orders that may have been lost in transit.
        let resend: Vec<(u32, usize)> = self
            .registry
            .entries
            .iter_mut()
            .filter_map(|(&id, e)| match e.pending {
                Some((t, sent)) if now - sent >= 2.0 * self.policy.period => {
                    e.pending = Some((t, now));
                    Some((id, t))
                }
                _ => None,
            })
            .collect();
        for (fls, target) in resend {
            self.assign(ctx, fls, target)?;
        }
        ctx.schedule_timer(self.policy.period, SWEEP_TIMER)?;
        Ok(())
    }
}

impl Actor<World, SwarmEffect> for Hub {
    fn handle(&mut self, event: &Event, ctx: &mut Ctx) -> Result<(), HandlerError> {
        match &event.kind {
            EventKind::TimerFired(tag) if tag == SWEEP_TIMER => self.sweep(ctx),
            EventKind::MessageDelivered(dg) => {
                if let Ok(Message::Heartbeat { fls, role, target, position, .. }) = Message::decode(&dg.payload) {
                    let duplicate = self.registry.observe(fls, role, target, position, dg.sent_at, ctx.now());
                    if duplicate {
                        ctx.send(fls_actor(fls), &Message::Release.encode())?;
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn state(&self) -> &'static str {
        "coordinating"
    }

    fn states(&self) -> &'static [&'static str] {
        &["coordinating"]
    }
}
