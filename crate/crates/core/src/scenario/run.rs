//! Tick driver: builds the actors for a scenario, runs them and collects logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{KinematicState, Vec3};
use crate::haptics::{hand_probe_step, HandProbe, Shape, Waypoint};
use crate::runtime::{ActorFailure, EventKind, FailureReason, Runtime};
use crate::swarm::{
    assign_targets, circle_waypoint, fls_actor, Behavior, Body, FlsAgent, FlsRecord, FlsSetup, HandState, Hub,
    Registry, Rgb, Role, SwarmEffect, World, HEARTBEAT_TIMER, LOCALIZE_TIMER, SWEEP_TIMER,
};
use crate::transport::ActorId;

use super::metrics::{format_time, parse_trajectory, write_frame, Frame, MetricsAccumulator, RunMetrics, Sample};
use super::{Guidance, Mode, ScenarioConfig, ScenarioError};

const HUB: ActorId = ActorId(0);
/// Spacing of the Terminus row, m.
const TERMINUS_SPACING: f64 = 0.2;

/// Text logs of one run. Series are tab-free, space-separated column files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLogs {
    pub trajectory: String,
    pub roles: String,
    pub series: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub logs: RunLogs,
    pub metrics: RunMetrics,
    pub failures: Vec<ActorFailure>,
}

impl RunOutput {
    /// Writes `trajectory.log`, `roles.log`, `metrics.txt` and one
    /// `<name>.dat` per series into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trajectory.log"), &self.logs.trajectory)?;
        std::fs::write(dir.join("roles.log"), &self.logs.roles)?;
        std::fs::write(dir.join("metrics.txt"), self.metrics.to_string())?;
        for (name, text) in &self.logs.series {
            std::fs::write(dir.join(format!("{name}.dat")), text)?;
        }
        Ok(())
    }
}

fn invalid(detail: impl Into<String>) -> ScenarioError {
    ScenarioError::ConfigInvalid(detail.into())
}

fn runtime_err(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Runtime(e.to_string())
}

fn failure_reason(r: &FailureReason) -> String {
    let s = match r {
        FailureReason::Crash => "crash".to_string(),
        FailureReason::HandlerPanic(_) => "handler_panic".to_string(),
        FailureReason::HandlerError(e) => format!("handler_error:{e}"),
        FailureReason::InvalidState(s) => format!("invalid_state:{s}"),
    };
    s.split_whitespace().collect::<Vec<_>>().join("_")
}

/// Everything built from the config before the first tick.
struct Setup {
    records: Vec<FlsRecord>,
    targets: Vec<Vec3>,
    target_index: Vec<Option<usize>>,
    assignment_optimal: bool,
    hand: Option<HandProbe>,
}

fn random_starts(cfg: &ScenarioConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec3>, ScenarioError> {
    let (lo, hi) = (cfg.swarm.start_min, cfg.swarm.start_max);
    let mut out: Vec<Vec3> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..10_000 {
            let p = Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(lo.z..hi.z));
            if out.iter().all(|q| q.distance(p) >= cfg.swarm.start_spacing) {
                out.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(invalid(format!("cannot place {n} FLSs {} m apart in the start box", cfg.swarm.start_spacing)));
        }
    }
    Ok(out)
}

fn record(id: u32, role: Role, position: Vec3, battery: f64) -> FlsRecord {
    FlsRecord {
        id,
        kinematics: KinematicState::at_rest(position),
        role,
        battery,
        target: None,
        color: Rgb::default(),
        docked: false,
    }
}

/// Pad of FLS `i`. Pads form a grid growing along +x and −y from the
/// charger; standbys take the slots nearest to it.
fn pad(cfg: &ScenarioConfig, i: usize) -> Vec3 {
    let n_ill = cfg.swarm.illuminating.unwrap_or(cfg.pointcloud.n);
    let n = n_ill + cfg.swarm.standby;
    let slot = if i >= n_ill { i - n_ill } else { cfg.swarm.standby + i };
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let s = cfg.swarm.pad_spacing;
    cfg.swarm.charging.charger_position + Vec3::X * ((slot % cols) as f64 * s) - Vec3::Y * ((slot / cols) as f64 * s)
}

fn render_setup(cfg: &ScenarioConfig) -> Result<Setup, ScenarioError> {
    let cloud = cfg.targets()?;
    let targets = cloud.positions();
    let n_ill = cfg.swarm.illuminating.unwrap_or(targets.len());
    let n = n_ill + cfg.swarm.standby;
    let full = cfg.swarm.charging.full_battery;
    let battery = |i: usize| full * (1.0 - cfg.swarm.battery_stagger * i as f64 / n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts = random_starts(cfg, n_ill, &mut rng)?;

    // Each launched FLS gets at most one target; surplus FLSs head home.
    let (by_fls, optimal) = if n_ill >= targets.len() {
        let a = assign_targets(&starts, &targets).map_err(runtime_err)?;
        (a.by_fls, a.optimal)
    } else {
        let a = assign_targets(&targets, &starts).map_err(runtime_err)?;
        (a.by_target.into_iter().map(Some).collect(), a.optimal)
    };

    let mut records = Vec::with_capacity(n);
    let mut target_index = Vec::with_capacity(n);
    for (i, (&p, t)) in starts.iter().zip(&by_fls).enumerate() {
        let role = if t.is_some() { Role::Illuminating } else { Role::Standby };
        let mut r = record(i as u32, role, p, battery(i));
        if let Some(t) = *t {
            r.target = Some(targets[t]);
            r.color = cloud.points[t].1;
        }
        records.push(r);
        target_index.push(*t);
    }
    for i in n_ill..n {
        let mut r = record(i as u32, Role::Standby, pad(cfg, i), battery(i));
        r.docked = true;
        records.push(r);
        target_index.push(None);
    }
    Ok(Setup { records, targets, target_index, assignment_optimal: optimal, hand: None })
}

fn circle_setup(cfg: &ScenarioConfig) -> Setup {
    let c = &cfg.circle;
    let records = (0..c.count)
        .map(|i| {
            let p = circle_waypoint(c.radius, c.speed, c.plane, c.phase(i), 0.0, c.center);
            let mut r = record(i as u32, Role::Illuminating, p, cfg.swarm.charging.full_battery);
            r.target = Some(p);
            r
        })
        .collect();
    Setup { records, targets: Vec::new(), target_index: vec![None; c.count], assignment_optimal: true, hand: None }
}

fn wall_frame(cfg: &ScenarioConfig) -> Result<(Vec3, Vec3), ScenarioError> {
    let wall = cfg.wall()?;
    let Shape::HalfSpace { point, normal } = wall.shape else {
        unreachable!("wall() only returns half-spaces")
    };
    Ok((cfg.haptic.setpoint.unwrap_or(point), normal))
}

fn wall_setup(cfg: &ScenarioConfig) -> Result<Setup, ScenarioError> {
    let h = &cfg.haptic;
    let (setpoint, n) = wall_frame(cfg)?;
    let above = setpoint + n * h.approach_from;
    let pressed = setpoint - n * h.depth;
    let mut script = Vec::new();
    if h.press_start > 0.0 {
        script.push(Waypoint { time: 0.0, position: above });
    }
    script.push(Waypoint { time: h.press_start, position: above });
    script.push(Waypoint { time: h.press_start + h.press_time, position: pressed });
    if h.hold > 0.0 {
        script.push(Waypoint { time: h.release_time(), position: pressed });
    }
    script.push(Waypoint { time: h.release_time() + h.retract, position: above });
    let hand = HandProbe::new(script).map_err(|e| invalid(format!("haptic: {e}")))?;
    let mut r = record(0, Role::Illuminating, setpoint, cfg.swarm.charging.full_battery);
    r.target = Some(setpoint);
    Ok(Setup { records: vec![r], targets: Vec::new(), target_index: vec![None], assignment_optimal: true, hand: Some(hand) })
}

fn behavior(cfg: &ScenarioConfig, i: usize) -> Result<Behavior, ScenarioError> {
    Ok(match cfg.mode {
        Mode::PointCloudRender => Behavior::Render {
            apf: cfg.swarm.apf,
            reactive: cfg.swarm.guidance == Guidance::Reactive,
            pad: pad(cfg, i),
            charging: cfg.swarm.charging,
            lifecycle: cfg.swarm.lifecycle,
        },
        Mode::CircleFormation => {
            let c = &cfg.circle;
            Behavior::Circle { radius: c.radius, speed: c.speed, plane: c.plane, phase: c.phase(i), center: c.center }
        }
        Mode::HapticWallPress => Behavior::WallPress {
            setpoint: wall_frame(cfg)?.0,
            wall: cfg.wall()?,
            touch_threshold: cfg.haptic.touch_threshold,
        },
    })
}

/// Running per-target coverage bookkeeping.
struct Coverage {
    covered: Vec<bool>,
    last_recovered: f64,
}

/// Wall-press figures measured after the hand lets go.
#[derive(Default)]
struct PressStats {
    overshoot: f64,
    last_outside: Option<f64>,
    peak_force: f64,
    touch_ticks: u64,
}

struct Driver<'a> {
    cfg: &'a ScenarioConfig,
    rt: Runtime<World, SwarmEffect>,
    records: Vec<FlsRecord>,
    target_index: Vec<Option<usize>>,
    terminus: Vec<Option<Vec3>>,
    failures_seen: usize,
    failed_count: usize,
    logs: RunLogs,
    acc: MetricsAccumulator,
    extra: BTreeMap<String, f64>,
    coverage: Option<Coverage>,
    targets: Vec<Vec3>,
    battery_deaths: u64,
    min_release_battery: f64,
    violations: BTreeMap<String, u64>,
    loc_sq: f64,
    loc_n: u64,
    reaction: Vec3,
    press: PressStats,
}

fn series<'b>(logs: &'b mut RunLogs, name: &str) -> &'b mut String {
    logs.series.entry(name.to_string()).or_default()
}

impl Driver<'_> {
    fn frame(&self, time: f64) -> Frame {
        Frame {
            time,
            samples: self
                .records
                .iter()
                .zip(&self.terminus)
                .map(|(r, slot)| Sample {
                    fls: r.id,
                    position: slot.unwrap_or(r.kinematics.position),
                    velocity: if slot.is_some() { Vec3::ZERO } else { r.kinematics.velocity },
                    role: r.role,
                })
                .collect(),
        }
    }

    fn send_to_terminus(&mut self, fls: usize) {
        if self.terminus[fls].is_none() {
            self.terminus[fls] = Some(self.cfg.swarm.terminus + Vec3::Y * (self.failed_count as f64 * TERMINUS_SPACING));
            self.failed_count += 1;
        }
    }

    fn role_line(&mut self, time: f64, fls: u32, from: Role, to: Role, reason: &str) {
        writeln!(self.logs.roles, "{} {fls} {from} {to} {reason}", format_time(time)).expect("write to string");
    }

    fn world(&self, dt: f64, hand: Option<HandState>) -> World {
        World {
            dt,
            bodies: self
                .records
                .iter()
                .filter(|r| r.role != Role::Failed)
                .map(|r| Body {
                    fls: r.id,
                    position: r.kinematics.position,
                    velocity: r.kinematics.velocity,
                    airborne: r.airborne(),
                })
                .collect(),
            hand,
        }
    }

    /// Applies the effects of one tick ending at `time`.
    fn absorb(&mut self, time: f64) {
        let mut releases: Vec<u32> = Vec::new();
        for (_, effect) in self.rt.drain_effects() {
            match effect {
                SwarmEffect::State { record, target_index } => {
                    let i = record.id as usize;
                    self.records[i] = record;
                    self.target_index[i] = target_index;
                }
                SwarmEffect::RoleChange { fls, from, to, reason } => {
                    self.role_line(time, fls, from, to, &reason);
                    if reason == "battery_depleted" {
                        self.battery_deaths += 1;
                    }
                    if to == Role::Failed {
                        self.send_to_terminus(fls as usize);
                    }
                    if from == Role::Illuminating && to == Role::ToCharger {
                        releases.push(fls);
                    }
                }
                SwarmEffect::Violation { kind, .. } => {
                    *self.violations.entry(format!("violations_{kind:?}").to_lowercase()).or_default() += 1;
                }
                SwarmEffect::Haptic(h) => {
                    self.reaction = h.force;
                    let (_, n) = wall_frame(self.cfg).expect("validated");
                    let disp = h.displacement.dot(n);
                    self.press.peak_force = self.press.peak_force.max(h.force.norm());
                    self.press.touch_ticks += h.touch as u64;
                    let release = self.cfg.haptic.release_time();
                    if time > release {
                        self.press.overshoot = self.press.overshoot.max(disp);
                        if h.displacement.norm() > 0.02 * self.cfg.haptic.depth {
                            self.press.last_outside = Some(time);
                        }
                    }
                    writeln!(
                        series(&mut self.logs, "haptic"),
                        "{} {} {} {} {} {:?} {}",
                        format_time(time),
                        h.depth,
                        disp,
                        h.force.dot(n),
                        h.rendered.dot(n),
                        h.feedback,
                        h.touch as u8
                    )
                    .expect("write to string");
                }
                SwarmEffect::Localized { fls, error, residual, .. } => {
                    self.loc_sq += error * error;
                    self.loc_n += 1;
                    writeln!(series(&mut self.logs, "localization"), "{} {fls} {error} {residual}", format_time(time))
                        .expect("write to string");
                }
                SwarmEffect::HubFailed { fls } => {
                    writeln!(series(&mut self.logs, "hub"), "{} failed {fls}", format_time(time)).expect("write to string");
                }
                SwarmEffect::HubAssigned { fls, target } => {
                    writeln!(series(&mut self.logs, "hub"), "{} assigned {fls} {target}", format_time(time))
                        .expect("write to string");
                }
                SwarmEffect::HubUncovered { count } => {
                    writeln!(series(&mut self.logs, "hub"), "{} uncovered {count}", format_time(time))
                        .expect("write to string");
                }
            }
        }
        for fls in releases {
            self.min_release_battery = self.min_release_battery.min(self.records[fls as usize].battery);
        }

        let failures = self.rt.failures()[self.failures_seen..].to_vec();
        self.failures_seen += failures.len();
        for f in failures {
            if f.actor == HUB {
                continue;
            }
            let fls = (f.actor.0 - 1) as usize;
            let from = self.records[fls].role;
            if from != Role::Failed {
                self.records[fls].role = Role::Failed;
                self.records[fls].docked = false;
                self.target_index[fls] = None;
                self.role_line(time, fls as u32, from, Role::Failed, &failure_reason(&f.reason));
            }
            self.send_to_terminus(fls);
        }
    }

    fn update_coverage(&mut self, time: f64) {
        let Some(cov) = &mut self.coverage else {
            return;
        };
        let tol = self.cfg.swarm.cover_tolerance;
        let mut now = vec![false; self.targets.len()];
        for (r, t) in self.records.iter().zip(&self.target_index) {
            if let (Role::Illuminating, Some(t)) = (r.role, *t) {
                if r.kinematics.position.distance(self.targets[t]) <= tol {
                    now[t] = true;
                }
            }
        }
        for (was, is) in cov.covered.iter().zip(&now) {
            if !was && *is {
                cov.last_recovered = time;
            }
        }
        cov.covered = now;
    }

    fn log_series(&mut self, time: f64) {
        let t = format_time(time);
        for r in &self.records {
            writeln!(series(&mut self.logs, "battery"), "{t} {} {} {}", r.id, r.battery, r.role).expect("write to string");
        }
        if self.cfg.mode == Mode::CircleFormation {
            let c = self.cfg.circle;
            for (i, r) in self.records.iter().enumerate() {
                let reference = circle_waypoint(c.radius, c.speed, c.plane, c.phase(i), time, c.center);
                writeln!(series(&mut self.logs, "tracking"), "{t} {} {}", r.id, r.kinematics.position.distance(reference))
                    .expect("write to string");
            }
        }
    }
}

/// Runs a scenario to completion. Deterministic for a fixed config.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, ScenarioError> {
    cfg.validate()?;
    let setup = match cfg.mode {
        Mode::PointCloudRender => render_setup(cfg)?,
        Mode::CircleFormation => circle_setup(cfg),
        Mode::HapticWallPress => wall_setup(cfg)?,
    };
    let n = setup.records.len();
    let hp = cfg.swarm.heartbeat;
    let with_hub = cfg.mode == Mode::PointCloudRender;
    let anchors = cfg.anchors()?;

    let mut rt: Runtime<World, SwarmEffect> = Runtime::new(cfg.network, cfg.seed).map_err(runtime_err)?;
    if with_hub {
        let mut registry = Registry::new(setup.targets.clone());
        for (r, t) in setup.records.iter().zip(&setup.target_index) {
            registry.insert(r.id, r.role, r.kinematics.position, *t, 0.0);
        }
        rt.add_actor(HUB, Box::new(Hub::new(registry, hp))).map_err(runtime_err)?;
        rt.schedule_timer(HUB, hp.period, SWEEP_TIMER).map_err(runtime_err)?;
    }
    for (i, r) in setup.records.iter().enumerate() {
        let id = fls_actor(r.id);
        let agent = FlsAgent::new(FlsSetup {
            record: r.clone(),
            target_index: setup.target_index[i],
            behavior: behavior(cfg, i)?,
            gains: cfg.dynamics.gains,
            limits: cfg.dynamics.limits,
            downwash: cfg.dynamics.downwash,
            hub: with_hub.then_some((HUB, hp)),
            localization: match (&anchors, cfg.localization.epoch) {
                (Some(a), Some(epoch)) => Some((cfg.localization.model, a.clone(), epoch)),
                _ => None,
            },
            thrust_curve: if cfg.dynamics.thrust_noise {
                Some(cfg.dynamics.calibration.clone().unwrap_or_default())
            } else {
                None
            },
            seed: cfg.seed,
        });
        rt.add_actor(id, Box::new(agent)).map_err(runtime_err)?;
        let stagger = (i + 1) as f64 / (n + 1) as f64;
        if with_hub {
            rt.schedule_timer(id, hp.period * stagger, HEARTBEAT_TIMER).map_err(runtime_err)?;
        }
        if let Some(epoch) = cfg.localization.epoch {
            rt.schedule_timer(id, epoch * stagger, LOCALIZE_TIMER).map_err(runtime_err)?;
        }
    }
    for f in &cfg.faults {
        rt.inject_fault(fls_actor(f.fls), f.at).map_err(runtime_err)?;
    }

    let mut acc = MetricsAccumulator::new(setup.targets.clone(), cfg.swarm.apf.safety_radius);
    if cfg.mode == Mode::CircleFormation {
        let c = cfg.circle;
        acc = acc.with_reference(
            move |fls, t| circle_waypoint(c.radius, c.speed, c.plane, c.phase(fls as usize), t, c.center),
            c.period(),
        );
    }
    let mut d = Driver {
        cfg,
        rt,
        records: setup.records,
        target_index: setup.target_index,
        terminus: vec![None; n],
        failures_seen: 0,
        failed_count: 0,
        logs: RunLogs::default(),
        acc,
        extra: BTreeMap::new(),
        coverage: with_hub.then(|| Coverage { covered: vec![false; setup.targets.len()], last_recovered: 0.0 }),
        targets: setup.targets,
        battery_deaths: 0,
        min_release_battery: f64::INFINITY,
        violations: BTreeMap::new(),
        loc_sq: 0.0,
        loc_n: 0,
        reaction: Vec3::ZERO,
        press: PressStats::default(),
    };
    d.extra.insert("assignment_optimal".into(), setup.assignment_optimal as u8 as f64);

    let dt = cfg.dt;
    let steps = (cfg.duration / dt).round() as usize;
    let mut hand = setup.hand;
    let first = d.frame(0.0);
    write_frame(&mut d.logs.trajectory, &first);
    d.acc.push(&first);
    d.log_series(0.0);
    d.update_coverage(0.0);

    for k in 0..steps {
        let t = k as f64 * dt;
        let t_next = (k + 1) as f64 * dt;
        let hand_next = hand.as_ref().map(|h| hand_probe_step(h, d.reaction, cfg.haptic.compliance, dt));
        let world = d.world(
            dt,
            hand_next.as_ref().map(|h| HandState { position: h.position, velocity: h.velocity }),
        );
        for r in d.records.iter().filter(|r| r.role != Role::Failed) {
            let id = fls_actor(r.id);
            if d.rt.is_alive(id) {
                d.rt.enqueue_event(t, id, EventKind::Tick).map_err(runtime_err)?;
            }
        }
        d.rt.advance(t, &world).map_err(runtime_err)?;
        d.absorb(t_next);
        hand = hand_next;

        let frame = d.frame(t_next);
        d.acc.push(&frame);
        d.update_coverage(t_next);
        if (k + 1) % cfg.log_every == 0 {
            write_frame(&mut d.logs.trajectory, &frame);
            d.log_series(t_next);
        }
    }

    let mut metrics = d.acc.finish(d.rt.transport_stats());
    let mut extra = std::mem::take(&mut d.extra);
    extra.insert("battery_deaths".into(), d.battery_deaths as f64);
    for (k, v) in &d.violations {
        extra.insert(k.clone(), *v as f64);
    }
    extra.insert("failed_fls".into(), d.failed_count as f64);
    if d.min_release_battery.is_finite() {
        extra.insert("min_release_battery".into(), d.min_release_battery);
    }
    if let Some(cov) = &d.coverage {
        extra.insert("targets_covered".into(), cov.covered.iter().filter(|c| **c).count() as f64);
        extra.insert("last_recovery_time".into(), cov.last_recovered);
    }
    if d.loc_n > 0 {
        extra.insert("localization_rmse".into(), (d.loc_sq / d.loc_n as f64).sqrt());
    }
    if cfg.mode == Mode::CircleFormation {
        let frames = parse_trajectory(&d.logs.trajectory)?;
        if let Some(p) = circle_period(cfg, &frames) {
            extra.insert("measured_period".into(), p);
        }
    }
    if cfg.mode == Mode::HapticWallPress {
        let release = cfg.haptic.release_time();
        extra.insert("overshoot".into(), d.press.overshoot);
        extra.insert("peak_force".into(), d.press.peak_force);
        extra.insert("touch_ticks".into(), d.press.touch_ticks as f64);
        extra.insert(
            "settle_time".into(),
            match d.press.last_outside {
                Some(t) if t >= steps as f64 * dt - dt / 2.0 => f64::INFINITY,
                Some(t) => t - release,
                None => 0.0,
            },
        );
    }
    metrics.extra = extra;
    Ok(RunOutput { logs: d.logs, metrics, failures: d.rt.failures().to_vec() })
}

/// Period of FLS 0's motion around the circle, from the logged frames.
pub fn circle_period(cfg: &ScenarioConfig, frames: &[Frame]) -> Option<f64> {
    let c = cfg.circle;
    let (_, v) = c.plane.axes();
    let (times, values): (Vec<f64>, Vec<f64>) = frames
        .iter()
        .filter_map(|f| f.samples.iter().find(|s| s.fls == 0).map(|s| (f.time, (s.position - c.center).dot(v))))
        .unzip();
    super::measure_period(&times, &values)
}

/// Metrics of a logged trajectory against the scenario it came from.
pub fn metrics_for_log(text: &str, cfg: &ScenarioConfig) -> Result<RunMetrics, ScenarioError> {
    let frames = parse_trajectory(text)?;
    let targets = match cfg.mode {
        Mode::PointCloudRender => {
            if frames.is_empty() {
                return Err(invalid("empty trajectory log"));
            }
            cfg.targets()?.positions()
        }
        _ => Vec::new(),
    };
    let mut acc = MetricsAccumulator::new(targets, cfg.swarm.apf.safety_radius);
    if cfg.mode == Mode::CircleFormation {
        let c = cfg.circle;
        acc = acc.with_reference(
            move |fls, t| circle_waypoint(c.radius, c.speed, c.plane, c.phase(fls as usize), t, c.center),
            c.period(),
        );
    }
    for f in &frames {
        acc.push(f);
    }
    let mut m = acc.finish(Default::default());
    if cfg.mode == Mode::CircleFormation {
        if let Some(p) = circle_period(cfg, &frames) {
            m.extra.insert("measured_period".into(), p);
        }
    }
    Ok(m)
}
