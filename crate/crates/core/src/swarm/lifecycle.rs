//! Battery/charging lifecycle and hub-side failure detection.

use std::collections::BTreeMap;

use crate::dynamics::Vec3;

use super::{ChargingPolicy, FlsRecord, HeartbeatPolicy, Role};

/// Conservative flight time to the charger: 1.5× the straight-line time at
/// full speed plus 2 s for docking.
pub fn travel_time_estimate(from: Vec3, charger: Vec3, v_max: f64) -> f64 {
    from.distance(charger) / v_max * 1.5 + 2.0
}

/// Advances battery state by `dt` and applies the threshold policy.
/// Returns the updated record and the transition taken, if any, with its
/// reason.
pub fn charging_tick(
    fls: &FlsRecord,
    policy: &ChargingPolicy,
    dt: f64,
    travel_time_estimate: f64,
) -> (FlsRecord, Option<(Role, Role, &'static str)>) {
    let mut next = fls.clone();
    let change = |next: &mut FlsRecord, to: Role, reason| {
        next.transition(to).ok().map(|from| (from, to, reason))
    };
    match fls.role {
        Role::Failed => (next, None),
        Role::Charging => {
            next.battery = (next.battery + policy.recharge_rate * dt).min(policy.full_battery);
            let t = if next.battery >= policy.full_battery {
                change(&mut next, Role::Standby, "charged")
            } else {
                None
            };
            (next, t)
        }
        _ if !fls.airborne() => (next, None),
        role => {
            next.battery = (next.battery - policy.drain_rate * dt).max(0.0);
            if next.battery <= 0.0 {
                let t = change(&mut next, Role::Failed, "battery_depleted");
                next.docked = false;
                return (next, t);
            }
            let t = match role {
                Role::Illuminating if next.battery < policy.reserve + travel_time_estimate => {
                    change(&mut next, Role::ToCharger, "low_battery")
                }
                Role::ToCharger
                    if next.kinematics.position.distance(policy.charger_position) <= policy.dock_tolerance =>
                {
                    next.docked = true;
                    next.kinematics.position = policy.charger_position;
                    next.kinematics.velocity = Vec3::ZERO;
                    change(&mut next, Role::Charging, "docked")
                }
                _ => None,
            };
            (next, t)
        }
    }
}

/// Hub's view of one FLS, maintained from heartbeats.
#[derive(Debug, Clone, PartialEq)]
pub struct HubEntry {
    pub role: Role,
    pub position: Vec3,
    pub target: Option<usize>,
    pub last_seen: f64,
    /// Send time of the newest heartbeat applied.
    pub last_sent: f64,
    /// Outstanding takeover order: (target, time the order was sent).
    pub pending: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    pub targets: Vec<Vec3>,
    pub entries: BTreeMap<u32, HubEntry>,
    /// FLS responsible for each target.
    pub owner: Vec<Option<u32>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeartbeatOutcome {
    pub failed: Vec<u32>,
    /// (standby FLS, target index) orders to send.
    pub takeovers: Vec<(u32, usize)>,
    pub uncovered: Vec<usize>,
}

impl Registry {
    pub fn new(targets: Vec<Vec3>) -> Self {
        let owner = vec![None; targets.len()];
        Self { targets, entries: BTreeMap::new(), owner }
    }

    pub fn insert(&mut self, fls: u32, role: Role, position: Vec3, target: Option<usize>, now: f64) {
        if let Some(t) = target {
            self.owner[t] = Some(fls);
        }
        self.entries.insert(
            fls,
            HubEntry { role, position, target, last_seen: now, last_sent: now, pending: None },
        );
    }

    fn release_owned(&mut self, fls: u32) {
        for o in self.owner.iter_mut().filter(|o| **o == Some(fls)) {
            *o = None;
        }
    }

    /// Applies a heartbeat. Returns true when the sender illuminates a target
    /// that has since been handed to another FLS and should stand down.
    pub fn observe(
        &mut self,
        fls: u32,
        role: Role,
        target: Option<usize>,
        position: Vec3,
        sent_at: f64,
        now: f64,
    ) -> bool {
        let Some(entry) = self.entries.get_mut(&fls) else {
            return false;
        };
        if sent_at < entry.last_sent {
            return false;
        }
        entry.last_sent = sent_at;
        entry.last_seen = now;
        entry.role = role;
        entry.position = position;
        entry.target = target;
        match (role, target) {
            (Role::Illuminating, Some(t)) if t < self.owner.len() => {
                entry.pending = None;
                match self.owner[t] {
                    None => {
                        self.owner[t] = Some(fls);
                        false
                    }
                    Some(o) => o != fls,
                }
            }
            // Order still in flight.
            (Role::Standby, _) if entry.pending.is_some() => false,
            _ => {
                entry.pending = None;
                self.release_owned(fls);
                false
            }
        }
    }

    pub fn covered(&self, target: usize) -> bool {
        self.owner[target].is_some()
    }
}

/// Declares silent FLSs failed and hands every uncovered target to the
/// nearest fresh standby (ties to the lower id). Targets left without a
/// standby are reported uncovered.
pub fn process_heartbeats(reg: &mut Registry, now: f64, hp: &HeartbeatPolicy) -> HeartbeatOutcome {
    let mut out = HeartbeatOutcome::default();
    let timeout = hp.timeout();
    let stale: Vec<u32> = reg
        .entries
        .iter()
        .filter(|(_, e)| {
            (e.role == Role::Illuminating || e.pending.is_some()) && now - e.last_seen >= timeout
        })
        .map(|(&id, _)| id)
        .collect();
    for id in stale {
        let e = reg.entries.get_mut(&id).expect("listed");
        e.role = Role::Failed;
        e.pending = None;
        reg.release_owned(id);
        out.failed.push(id);
    }
    for t in 0..reg.targets.len() {
        if reg.covered(t) {
            continue;
        }
        let goal = reg.targets[t];
        let pick = reg
            .entries
            .iter()
            .filter(|(_, e)| e.role == Role::Standby && e.pending.is_none() && now - e.last_seen < timeout)
            .min_by(|a, b| {
                a.1.position
                    .distance(goal)
                    .total_cmp(&b.1.position.distance(goal))
                    .then(a.0.cmp(b.0))
            })
            .map(|(&id, _)| id);
        match pick {
            Some(id) => {
                reg.entries.get_mut(&id).expect("picked").pending = Some((t, now));
                reg.owner[t] = Some(id);
                out.takeovers.push((id, t));
            }
            None => out.uncovered.push(t),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::KinematicState;
    use crate::swarm::Rgb;

    fn record(role: Role, battery: f64, pos: Vec3) -> FlsRecord {
        FlsRecord {
            id: 1,
            kinematics: KinematicState::at_rest(pos),
            role,
            battery,
            target: (role == Role::Illuminating).then_some(Vec3::Z),
            color: Rgb::default(),
            docked: matches!(role, Role::Charging),
        }
    }

    fn policy() -> ChargingPolicy {
        ChargingPolicy { charger_position: Vec3::ZERO, ..Default::default() }
    }

    #[test]
    fn plenty_of_battery() {
        let r = record(Role::Illuminating, 500.0, Vec3::new(1.0, 1.0, 1.0));
        let (n, t) = charging_tick(&r, &policy(), 0.1, 5.0);
        assert_eq!(t, None);
        assert!((n.battery - 499.9).abs() < 1e-12);
    }

    #[test]
    fn threshold_crossing() {
        let p = policy();
        let r = record(Role::Illuminating, p.reserve + 5.0 + 0.1 - 1e-9, Vec3::new(1.0, 1.0, 1.0));
        let (n, t) = charging_tick(&r, &p, 0.1, 5.0);
        assert_eq!(t, Some((Role::Illuminating, Role::ToCharger, "low_battery")));
        assert!(n.battery >= p.reserve);
        assert_eq!(n.target, None);
    }

    #[test]
    fn docking() {
        let r = record(Role::ToCharger, 50.0, Vec3::new(0.05, 0.0, 0.0));
        let (n, t) = charging_tick(&r, &policy(), 0.1, 0.0);
        assert_eq!(t.map(|t| t.1), Some(Role::Charging));
        assert!(n.docked);
        assert_eq!(n.kinematics.position, Vec3::ZERO);
    }

    #[test]
    fn recharge_time() {
        let p = ChargingPolicy { recharge_rate: 5.0, full_battery: 100.0, ..policy() };
        let mut r = record(Role::Charging, 10.0, Vec3::ZERO);
        let mut ticks = 0;
        while r.role == Role::Charging {
            r = charging_tick(&r, &p, 1.0, 0.0).0;
            ticks += 1;
        }
        assert_eq!(ticks, 18);
        assert_eq!(r.role, Role::Standby);
        assert_eq!(r.battery, 100.0);
    }

    #[test]
    fn docked_standby_keeps_charge() {
        let mut r = record(Role::Standby, 100.0, Vec3::ZERO);
        r.docked = true;
        assert_eq!(charging_tick(&r, &policy(), 1.0, 0.0).0.battery, 100.0);
    }

    #[test]
    fn airborne_death() {
        let r = record(Role::ToCharger, 0.05, Vec3::new(3.0, 0.0, 0.0));
        let (n, t) = charging_tick(&r, &policy(), 0.1, 0.0);
        assert_eq!(n.role, Role::Failed);
        assert_eq!(t.map(|t| t.2), Some("battery_depleted"));
    }

    fn registry() -> Registry {
        let mut reg = Registry::new(vec![Vec3::new(1.0, 0.0, 1.0), Vec3::new(-1.0, 0.0, 1.0)]);
        reg.insert(0, Role::Illuminating, Vec3::new(1.0, 0.0, 1.0), Some(0), 0.0);
        reg.insert(1, Role::Illuminating, Vec3::new(-1.0, 0.0, 1.0), Some(1), 0.0);
        reg.insert(2, Role::Standby, Vec3::new(-1.0, 0.0, 0.0), None, 0.0);
        reg.insert(3, Role::Standby, Vec3::new(5.0, 0.0, 0.0), None, 0.0);
        reg
    }

    fn beat(reg: &mut Registry, ids: &[u32], t: f64) {
        for &id in ids {
            let e = reg.entries[&id].clone();
            reg.observe(id, e.role, e.target, e.position, t, t);
        }
    }

    #[test]
    fn fresh_heartbeats() {
        let mut reg = registry();
        let hp = HeartbeatPolicy::default();
        beat(&mut reg, &[0, 1, 2, 3], 1.0);
        let out = process_heartbeats(&mut reg, 1.2, &hp);
        assert_eq!(out, HeartbeatOutcome::default());
    }

    #[test]
    fn silent_fls_replaced_by_nearest_standby() {
        let mut reg = registry();
        let hp = HeartbeatPolicy { period: 0.5, miss_limit: 3 };
        beat(&mut reg, &[0, 2, 3], 1.5);
        let out = process_heartbeats(&mut reg, 1.5, &hp);
        assert_eq!(out.failed, vec![1]);
        assert_eq!(out.takeovers, vec![(2, 1)]);
        assert!(out.uncovered.is_empty());
        // Standby 2 still reports standby while the order is in flight.
        assert!(!reg.observe(2, Role::Standby, None, Vec3::ZERO, 1.6, 1.6));
        assert_eq!(reg.owner[1], Some(2));
        assert!(!reg.observe(2, Role::Illuminating, Some(1), Vec3::ZERO, 1.7, 1.7));
        assert_eq!(reg.entries[&2].pending, None);
    }

    #[test]
    fn empty_pool_leaves_target_uncovered() {
        let mut reg = registry();
        reg.entries.remove(&2);
        reg.entries.remove(&3);
        beat(&mut reg, &[0], 2.0);
        let out = process_heartbeats(&mut reg, 2.0, &HeartbeatPolicy::default());
        assert_eq!(out.failed, vec![1]);
        assert_eq!(out.uncovered, vec![1]);
        assert!(out.takeovers.is_empty());
    }

    #[test]
    fn charging_handoff_frees_target() {
        let mut reg = registry();
        beat(&mut reg, &[1, 2, 3], 0.5);
        reg.observe(0, Role::ToCharger, None, Vec3::ZERO, 0.5, 0.5);
        let out = process_heartbeats(&mut reg, 0.6, &HeartbeatPolicy::default());
        assert!(out.failed.is_empty());
        assert_eq!(out.takeovers, vec![(2, 0)]);
    }

    #[test]
    fn stale_heartbeats_ignored_and_duplicates_released() {
        let mut reg = registry();
        reg.observe(0, Role::Illuminating, Some(0), Vec3::ZERO, 1.0, 1.0);
        reg.observe(0, Role::ToCharger, None, Vec3::ZERO, 0.8, 1.1);
        assert_eq!(reg.entries[&0].role, Role::Illuminating);
        // A second FLS claiming an owned target is told to stand down.
        reg.entries.get_mut(&3).unwrap().role = Role::Illuminating;
        assert!(reg.observe(3, Role::Illuminating, Some(0), Vec3::ZERO, 1.2, 1.2));
    }
}
