//! Simulated unreliable datagram network.
//!
//! Every datagram's fate is sampled when it is sent: it is either dropped
//! with probability `loss_probability` or scheduled for delivery at
//! `now + base_delay + U(0, jitter)`. Reordering is a consequence of jitter
//! alone. Delivery order among due datagrams is `(deliver_at, src, seq)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActorId(pub u32);

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    Actor(ActorId),
    /// Every live registered actor except the sender.
    Broadcast,
}

impl From<ActorId> for Destination {
    fn from(id: ActorId) -> Self {
        Destination::Actor(id)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("payload of {size} bytes exceeds the {max} byte limit")]
    PayloadTooLarge { size: usize, max: usize },
    #[error("unknown destination actor {0}")]
    UnknownDestination(ActorId),
    #[error("send time {0} is negative or not finite")]
    InvalidTime(f64),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub loss_probability: f64,
    /// s
    pub base_delay: f64,
    /// Width of the uniform additive delay, s.
    pub jitter: f64,
    /// bytes
    pub max_payload: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            loss_probability: 0.0,
            base_delay: 0.005,
            jitter: 0.002,
            max_payload: 1024,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), TransportError> {
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(TransportError::InvalidConfig(format!(
                "loss_probability = {} not in [0, 1]",
                self.loss_probability
            )));
        }
        if !(self.base_delay >= 0.0 && self.base_delay.is_finite()) {
            return Err(TransportError::InvalidConfig(format!("base_delay = {}", self.base_delay)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(TransportError::InvalidConfig(format!("jitter = {}", self.jitter)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datagram {
    pub src: ActorId,
    pub dst: ActorId,
    /// Set when this copy was produced by a broadcast fan-out.
    pub broadcast: bool,
    pub payload: Vec<u8>,
    pub sent_at: f64,
    /// `None` when the datagram was dropped.
    pub deliver_at: Option<f64>,
    pub seq: u64,
}

impl Datagram {
    pub fn is_dropped(&self) -> bool {
        self.deliver_at.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransportStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub reordered: u64,
}

impl TransportStats {
    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.dropped
    }
}

/// Source of uniform samples in `[0, 1)` used to decide datagram fates.
pub trait UniformSource {
    fn next_unit(&mut self) -> f64;
}

impl<R: RngCore + ?Sized> UniformSource for R {
    fn next_unit(&mut self) -> f64 {
        use rand::Rng;
        self.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
struct DeliveryKey {
    deliver_at: f64,
    src: ActorId,
    seq: u64,
}

impl PartialEq for DeliveryKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for DeliveryKey {}

impl PartialOrd for DeliveryKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DeliveryKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.deliver_at
            .total_cmp(&other.deliver_at)
            .then(self.src.cmp(&other.src))
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    registered: BTreeSet<ActorId>,
    dead: BTreeSet<ActorId>,
    in_flight: BTreeMap<ActorId, BTreeMap<DeliveryKey, Datagram>>,
    next_seq: BTreeMap<ActorId, u64>,
    highest_delivered: BTreeMap<(ActorId, ActorId), u64>,
    stats: TransportStats,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self, TransportError> {
        config.validate()?;
        Ok(Self {
            config,
            registered: BTreeSet::new(),
            dead: BTreeSet::new(),
            in_flight: BTreeMap::new(),
            next_seq: BTreeMap::new(),
            highest_delivered: BTreeMap::new(),
            stats: TransportStats::default(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn register(&mut self, actor: ActorId) {
        self.registered.insert(actor);
        self.dead.remove(&actor);
    }

    pub fn is_registered(&self, actor: ActorId) -> bool {
        self.registered.contains(&actor)
    }

    /// Excludes `actor` from future broadcasts; datagrams already in flight
    /// to it are dropped when they come due.
    pub fn mark_dead(&mut self, actor: ActorId) {
        if self.registered.contains(&actor) {
            self.dead.insert(actor);
        }
    }

    pub fn is_live(&self, actor: ActorId) -> bool {
        self.registered.contains(&actor) && !self.dead.contains(&actor)
    }

    /// Sends one datagram per destination, sampling each fate independently.
    /// Returned copies include dropped datagrams (`deliver_at == None`).
    pub fn send<U: UniformSource + ?Sized>(
        &mut self,
        src: ActorId,
        dst: Destination,
        payload: &[u8],
        now: f64,
        rng: &mut U,
    ) -> Result<Vec<Datagram>, TransportError> {
        if payload.len() > self.config.max_payload {
            return Err(TransportError::PayloadTooLarge {
                size: payload.len(),
                max: self.config.max_payload,
            });
        }
        if !(now >= 0.0 && now.is_finite()) {
            return Err(TransportError::InvalidTime(now));
        }
        let (targets, broadcast): (Vec<ActorId>, bool) = match dst {
            Destination::Actor(id) => {
                if !self.registered.contains(&id) {
                    return Err(TransportError::UnknownDestination(id));
                }
                (vec![id], false)
            }
            Destination::Broadcast => (
                self.registered
                    .iter()
                    .copied()
                    .filter(|&id| id != src && !self.dead.contains(&id))
                    .collect(),
                true,
            ),
        };

        let mut out = Vec::with_capacity(targets.len());
        for target in targets {
            let seq = {
                let next = self.next_seq.entry(src).or_insert(0);
                *next += 1;
                *next
            };
            let dropped = rng.next_unit() < self.config.loss_probability;
            let deliver_at = if dropped {
                None
            } else {
                let jitter = if self.config.jitter > 0.0 {
                    rng.next_unit() * self.config.jitter
                } else {
                    0.0
                };
                Some(now + self.config.base_delay + jitter)
            };
            let dg = Datagram {
                src,
                dst: target,
                broadcast,
                payload: payload.to_vec(),
                sent_at: now,
                deliver_at,
                seq,
            };
            self.stats.sent += 1;
            match deliver_at {
                None => self.stats.dropped += 1,
                Some(at) => {
                    self.in_flight
                        .entry(target)
                        .or_default()
                        .insert(DeliveryKey { deliver_at: at, src, seq }, dg.clone());
                }
            }
            out.push(dg);
        }
        Ok(out)
    }

    /// Removes and returns every datagram for `actor` due by `now`, ordered by
    /// `(deliver_at, src, seq)`. Datagrams for a dead actor are counted as
    /// dropped and not returned.
    pub fn poll(&mut self, actor: ActorId, now: f64) -> Vec<Datagram> {
        let Some(queue) = self.in_flight.get_mut(&actor) else {
            return Vec::new();
        };
        let mut due = Vec::new();
        while let Some(entry) = queue.first_entry() {
            if entry.key().deliver_at > now {
                break;
            }
            due.push(entry.remove());
        }
        if queue.is_empty() {
            self.in_flight.remove(&actor);
        }
        if self.dead.contains(&actor) {
            self.stats.dropped += due.len() as u64;
            return Vec::new();
        }
        for dg in &due {
            self.stats.delivered += 1;
            let highest = self.highest_delivered.entry((dg.src, dg.dst)).or_insert(0);
            if dg.seq < *highest {
                self.stats.reordered += 1;
            } else {
                *highest = dg.seq;
            }
        }
        due
    }

    /// Earliest pending delivery time for `actor`.
    pub fn next_delivery(&self, actor: ActorId) -> Option<f64> {
        self.in_flight
            .get(&actor)
            .and_then(|q| q.keys().next())
            .map(|k| k.deliver_at)
    }

    pub fn stats(&self) -> TransportStats {
        self.stats
    }

    pub fn in_flight_count(&self) -> u64 {
        self.in_flight.values().map(|q| q.len() as u64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Replays a fixed sequence of uniform samples.
    struct Scripted(std::vec::IntoIter<f64>);

    impl Scripted {
        fn new(v: Vec<f64>) -> Self {
            Self(v.into_iter())
        }
    }

    impl UniformSource for Scripted {
        fn next_unit(&mut self) -> f64 {
            self.0.next().expect("script exhausted")
        }
    }

    fn net(loss: f64, base_delay: f64, jitter: f64) -> Network {
        let mut n = Network::new(NetworkConfig {
            loss_probability: loss,
            base_delay,
            jitter,
            max_payload: 64,
        })
        .unwrap();
        for i in 0..4 {
            n.register(ActorId(i));
        }
        n
    }

    fn assert_conserved(n: &Network) {
        let s = n.stats();
        assert_eq!(s.sent, s.delivered + s.dropped + n.in_flight_count());
    }

    #[test]
    fn deterministic_delivery_time() {
        let mut n = net(0.0, 0.01, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = n.send(ActorId(0), ActorId(1).into(), b"hi", 5.0, &mut rng).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].deliver_at, Some(5.0 + 0.01));
        assert_eq!(out[0].seq, 1);
    }

    #[test]
    fn certain_loss() {
        let mut n = net(1.0, 0.01, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = n.send(ActorId(0), ActorId(1).into(), b"x", 0.0, &mut rng).unwrap();
        assert!(out[0].is_dropped());
        assert!(n.poll(ActorId(1), 100.0).is_empty());
        assert_eq!(n.stats().delivered, 0);
        assert_eq!(n.stats().dropped, 1);
        assert_conserved(&n);
    }

    #[test]
    fn payload_limit_and_unknown_destination() {
        let mut n = net(0.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            n.send(ActorId(0), ActorId(1).into(), &[0u8; 65], 0.0, &mut rng),
            Err(TransportError::PayloadTooLarge { size: 65, max: 64 })
        ));
        assert_eq!(
            n.send(ActorId(0), ActorId(9).into(), b"", 0.0, &mut rng),
            Err(TransportError::UnknownDestination(ActorId(9)))
        );
        assert_eq!(n.stats(), TransportStats::default());
    }

    #[test]
    fn poll_empty_and_partial() {
        let mut n = net(0.0, 1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(n.poll(ActorId(1), 10.0).is_empty());
        n.send(ActorId(0), ActorId(1).into(), b"a", 0.0, &mut rng).unwrap();
        n.send(ActorId(0), ActorId(1).into(), b"b", 1.0, &mut rng).unwrap();
        let got = n.poll(ActorId(1), 1.5);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].payload, b"a");
        assert_conserved(&n);
        assert_eq!(n.next_delivery(ActorId(1)), Some(2.0));
    }

    #[test]
    fn jitter_reorders_with_scripted_samples() {
        // base 1.0, jitter 1.0: seq 1 lands at 1.9, seq 2 at 1.4.
        let mut n = net(0.0, 1.0, 1.0);
        let mut script = Scripted::new(vec![0.5, 0.9, 0.5, 0.4]);
        n.send(ActorId(0), ActorId(1).into(), b"1", 0.0, &mut script).unwrap();
        n.send(ActorId(0), ActorId(1).into(), b"2", 0.0, &mut script).unwrap();
        let got = n.poll(ActorId(1), 2.0);
        assert_eq!(got.iter().map(|d| d.seq).collect::<Vec<_>>(), vec![2, 1]);
        assert_eq!(n.stats().reordered, 1);
    }

    #[test]
    fn equal_delivery_times_ordered_by_source_then_seq() {
        let mut n = net(0.0, 0.5, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        n.send(ActorId(3), ActorId(1).into(), b"c", 0.0, &mut rng).unwrap();
        n.send(ActorId(2), ActorId(1).into(), b"b1", 0.0, &mut rng).unwrap();
        n.send(ActorId(2), ActorId(1).into(), b"b2", 0.0, &mut rng).unwrap();
        n.send(ActorId(0), ActorId(1).into(), b"a", 0.0, &mut rng).unwrap();
        let got: Vec<Vec<u8>> = n.poll(ActorId(1), 1.0).into_iter().map(|d| d.payload).collect();
        assert_eq!(got, vec![b"a".to_vec(), b"b1".to_vec(), b"b2".to_vec(), b"c".to_vec()]);
    }

    #[test]
    fn broadcast_skips_sender_and_dead() {
        let mut n = net(0.0, 0.1, 0.0);
        n.mark_dead(ActorId(2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = n.send(ActorId(1), Destination::Broadcast, b"hb", 0.0, &mut rng).unwrap();
        let dsts: Vec<ActorId> = out.iter().map(|d| d.dst).collect();
        assert_eq!(dsts, vec![ActorId(0), ActorId(3)]);
        assert!(out.iter().all(|d| d.broadcast));
        let seqs: Vec<u64> = out.iter().map(|d| d.seq).collect();
        assert_eq!(seqs, vec![1, 2]);
    }

    #[test]
    fn in_flight_to_dead_actor_counts_as_dropped() {
        let mut n = net(0.0, 1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        n.send(ActorId(0), ActorId(1).into(), b"x", 0.0, &mut rng).unwrap();
        n.mark_dead(ActorId(1));
        assert!(n.poll(ActorId(1), 5.0).is_empty());
        assert_eq!(n.stats().dropped, 1);
        assert_eq!(n.stats().delivered, 0);
        assert_conserved(&n);
    }

    #[test]
    fn fresh_network_stats_zero() {
        let n = net(0.3, 0.1, 0.1);
        assert_eq!(n.stats(), TransportStats::default());
        assert_eq!(n.stats().in_flight(), 0);
    }

    #[test]
    fn lossless_all_delivered() {
        let mut n = net(0.0, 0.01, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..10 {
            n.send(ActorId(0), ActorId(1).into(), b"p", k as f64 * 0.1, &mut rng).unwrap();
        }
        let got = n.poll(ActorId(1), 10.0);
        assert_eq!(got.len(), 10);
        let s = n.stats();
        assert_eq!((s.sent, s.delivered, s.dropped, s.reordered), (10, 10, 0, 0));
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            NetworkConfig { loss_probability: 1.5, ..Default::default() },
            NetworkConfig { base_delay: -0.1, ..Default::default() },
            NetworkConfig { jitter: f64::NAN, ..Default::default() },
        ] {
            assert!(Network::new(cfg).is_err());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn conservation_and_no_early_delivery(
                seed in any::<u64>(),
                loss in 0.0..1.0f64,
                jitter in 0.0..0.5f64,
                sends in proptest::collection::vec((0u32..4, 0u32..4, 0.0..0.2f64), 1..80),
            ) {
                let mut n = net(loss, 0.05, jitter);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut now = 0.0;
                for (src, dst, gap) in sends {
                    now += gap;
                    n.send(ActorId(src), ActorId(dst).into(), b"d", now, &mut rng).unwrap();
                    for a in 0..4 {
                        for dg in n.poll(ActorId(a), now) {
                            prop_assert!(dg.deliver_at.unwrap() >= dg.sent_at + 0.05);
                            prop_assert!(dg.deliver_at.unwrap() <= now);
                        }
                    }
                    let s = n.stats();
                    prop_assert_eq!(s.sent, s.delivered + s.dropped + n.in_flight_count());
                }
            }

            #[test]
            fn fifo_without_jitter(
                seed in any::<u64>(),
                gaps in proptest::collection::vec(0.0..0.1f64, 1..60),
            ) {
                let mut n = net(0.0, 0.05, 0.0);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut now = 0.0;
                for g in gaps {
                    now += g;
                    n.send(ActorId(0), ActorId(1).into(), b"d", now, &mut rng).unwrap();
                    n.send(ActorId(2), ActorId(1).into(), b"e", now, &mut rng).unwrap();
                    n.poll(ActorId(1), now);
                }
                n.poll(ActorId(1), now + 1.0);
                prop_assert_eq!(n.stats().reordered, 0);
            }

            #[test]
            fn replay_is_identical(seed in any::<u64>(), loss in 0.0..1.0f64) {
                let run = || {
                    let mut n = net(loss, 0.01, 0.05);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut fates = Vec::new();
                    for k in 0..50 {
                        let t = k as f64 * 0.01;
                        fates.extend(n.send(ActorId(k % 3), Destination::Broadcast, b"z", t, &mut rng).unwrap());
                    }
                    let order: Vec<(u32, u64)> = (0..4).flat_map(|a| n.poll(ActorId(a), 10.0)).map(|d| (d.src.0, d.seq)).collect();
                    (fates, order)
                };
                prop_assert_eq!(run(), run());
            }
        }
    }
}
