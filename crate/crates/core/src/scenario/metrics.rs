//! Trajectory log format and run metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::dynamics::Vec3;
use crate::swarm::Role;
use crate::transport::TransportStats;

use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub fls: u32,
    pub position: Vec3,
    pub velocity: Vec3,
    pub role: Role,
}

/// All FLS states at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub samples: Vec<Sample>,
}

/// Times are printed with fixed nanosecond precision so that logs are
/// stable under tiny accumulation differences.
pub fn format_time(t: f64) -> String {
    format!("{t:.9}")
}

pub fn write_frame(out: &mut String, frame: &Frame) {
    let t = format_time(frame.time);
    for s in &frame.samples {
        let (p, v) = (s.position, s.velocity);
        writeln!(out, "{t} {} {} {} {} {} {} {} {}", s.fls, p.x, p.y, p.z, v.x, v.y, v.z, s.role)
            .expect("write to string");
    }
}

/// Parses `time fls x y z vx vy vz role` lines back into frames.
pub fn parse_trajectory(text: &str) -> Result<Vec<Frame>, ScenarioError> {
    let mut frames: Vec<Frame> = Vec::new();
    let mut last_time_token = String::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let bad = |what: &str| ScenarioError::LogParse { line: line_no, detail: what.to_string() };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad("bad number"));
        let sample = Sample {
            fls: f[1].parse().map_err(|_| bad("bad fls id"))?,
            position: Vec3::new(num(2)?, num(3)?, num(4)?),
            velocity: Vec3::new(num(5)?, num(6)?, num(7)?),
            role: f[8].parse().map_err(|e: String| bad(&e))?,
        };
        if frames.is_empty() || f[0] != last_time_token {
            frames.push(Frame { time: num(0)?, samples: Vec::new() });
            last_time_token = f[0].to_string();
        }
        frames.last_mut().expect("pushed").samples.push(sample);
    }
    Ok(frames)
}

/// Largest distance from a point of `a` to its nearest point of `b`.
pub fn directed_hausdorff(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| p.distance(*q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance; zero for two empty sets.
pub fn hausdorff(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

/// Mean interval between upward zero crossings, linearly interpolated.
pub fn measure_period(times: &[f64], values: &[f64]) -> Option<f64> {
    let crossings: Vec<f64> = times
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, v)| v[0] < 0.0 && v[1] >= 0.0)
        .map(|(t, v)| t[0] + (t[1] - t[0]) * (-v[0] / (v[1] - v[0])))
        .collect();
    if crossings.len() < 2 {
        return None;
    }
    Some((crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub hausdorff: f64,
    pub mean_position_error: f64,
    pub collision_events: u64,
    pub min_pairwise_distance: f64,
    pub uncovered_target_seconds: f64,
    pub transport: TransportStats,
    pub tracking_rms: Option<f64>,
    /// Mode-specific figures (overshoot, settle time, measured period, ...).
    pub extra: BTreeMap<String, f64>,
}

impl fmt::Display for RunMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "hausdorff={}", self.hausdorff)?;
        writeln!(f, "mean_position_error={}", self.mean_position_error)?;
        writeln!(f, "collision_events={}", self.collision_events)?;
        writeln!(f, "min_pairwise_distance={}", self.min_pairwise_distance)?;
        writeln!(f, "uncovered_target_seconds={}", self.uncovered_target_seconds)?;
        writeln!(f, "datagrams_sent={}", self.transport.sent)?;
        writeln!(f, "datagrams_delivered={}", self.transport.delivered)?;
        writeln!(f, "datagrams_dropped={}", self.transport.dropped)?;
        writeln!(f, "datagrams_reordered={}", self.transport.reordered)?;
        if let Some(rms) = self.tracking_rms {
            writeln!(f, "tracking_rms={rms}")?;
        }
        for (k, v) in &self.extra {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

type Reference = Box<dyn Fn(u32, f64) -> Vec3>;

/// Streams frames and accumulates [`RunMetrics`].
pub struct MetricsAccumulator {
    targets: Vec<Vec3>,
    safety_radius: f64,
    reference: Option<(Reference, f64)>,
    close_pairs: BTreeSet<(u32, u32)>,
    collisions: u64,
    min_pair: f64,
    uncovered: f64,
    last_time: Option<f64>,
    sq_err: f64,
    n_err: usize,
    last: Option<Frame>,
}

impl MetricsAccumulator {
    pub fn new(targets: Vec<Vec3>, safety_radius: f64) -> Self {
        Self {
            targets,
            safety_radius,
            reference: None,
            close_pairs: BTreeSet::new(),
            collisions: 0,
            min_pair: f64::INFINITY,
            uncovered: 0.0,
            last_time: None,
            sq_err: 0.0,
            n_err: 0,
            last: None,
        }
    }

    /// Tracks position error against `reference(fls, t)` from `warmup` on.
    pub fn with_reference(mut self, reference: impl Fn(u32, f64) -> Vec3 + 'static, warmup: f64) -> Self {
        self.reference = Some((Box::new(reference), warmup));
        self
    }

    pub fn push(&mut self, frame: &Frame) {
        let live: Vec<&Sample> = frame.samples.iter().filter(|s| s.role != Role::Failed).collect();
        for (i, a) in live.iter().enumerate() {
            for b in &live[i + 1..] {
                let d = a.position.distance(b.position);
                self.min_pair = self.min_pair.min(d);
                let key = (a.fls.min(b.fls), a.fls.max(b.fls));
                if d < self.safety_radius {
                    if self.close_pairs.insert(key) {
                        self.collisions += 1;
                    }
                } else {
                    self.close_pairs.remove(&key);
                }
            }
        }
        if let Some(prev) = self.last_time {
            let lit = live.iter().filter(|s| s.role == Role::Illuminating).count();
            let missing = self.targets.len().saturating_sub(lit);
            self.uncovered += missing as f64 * (frame.time - prev);
        }
        if let Some((reference, warmup)) = &self.reference {
            if frame.time >= *warmup {
                for s in &live {
                    self.sq_err += s.position.distance(reference(s.fls, frame.time)).powi(2);
                    self.n_err += 1;
                }
            }
        }
        self.last_time = Some(frame.time);
        self.last = Some(frame.clone());
    }

    pub fn last_frame(&self) -> Option<&Frame> {
        self.last.as_ref()
    }

    pub fn finish(&self, transport: TransportStats) -> RunMetrics {
        let lit: Vec<Vec3> = self
            .last
            .iter()
            .flat_map(|f| f.samples.iter())
            .filter(|s| s.role == Role::Illuminating)
            .map(|s| s.position)
            .collect();
        let (h, mean) = if self.targets.is_empty() {
            (0.0, 0.0)
        } else {
            let mean = if lit.is_empty() {
                0.0
            } else {
                lit.iter()
                    .map(|p| self.targets.iter().map(|t| p.distance(*t)).fold(f64::INFINITY, f64::min))
                    .sum::<f64>()
                    / lit.len() as f64
            };
            (hausdorff(&lit, &self.targets), mean)
        };
        RunMetrics {
            hausdorff: h,
            mean_position_error: mean,
            collision_events: self.collisions,
            min_pairwise_distance: self.min_pair,
            uncovered_target_seconds: self.uncovered,
            transport,
            tracking_rms: self
                .reference
                .as_ref()
                .map(|_| if self.n_err == 0 { 0.0 } else { (self.sq_err / self.n_err as f64).sqrt() }),
            extra: BTreeMap::new(),
        }
    }
}

/// Metrics of a sequence of frames.
pub fn compute_metrics(frames: &[Frame], targets: &[Vec3], safety_radius: f64) -> RunMetrics {
    let mut acc = MetricsAccumulator::new(targets.to_vec(), safety_radius);
    for f in frames {
        acc.push(f);
    }
    acc.finish(TransportStats::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn sample(fls: u32, p: Vec3) -> Sample {
        Sample { fls, position: p, velocity: Vec3::ZERO, role: Role::Illuminating }
    }

    fn targets() -> Vec<Vec3> {
        vec![Vec3::ZERO, Vec3::X, Vec3::new(0.0, 2.0, 0.0)]
    }

    #[test]
    fn exact_positions_zero_hausdorff() {
        let f = Frame { time: 0.0, samples: targets().iter().enumerate().map(|(i, &p)| sample(i as u32, p)).collect() };
        let m = compute_metrics(&[f], &targets(), 0.1);
        assert_eq!(m.hausdorff, 0.0);
        assert_eq!(m.mean_position_error, 0.0);
    }

    #[test]
    fn single_offset() {
        let mut pts = targets();
        pts[2].z += 0.1;
        let f = Frame { time: 0.0, samples: pts.iter().enumerate().map(|(i, &p)| sample(i as u32, p)).collect() };
        let m = compute_metrics(&[f], &targets(), 0.1);
        assert!((m.hausdorff - 0.1).abs() < 1e-15);
    }

    #[test]
    fn hausdorff_properties() {
        let a = targets();
        assert_eq!(hausdorff(&a, &a), 0.0);
        let b = vec![Vec3::new(0.5, 0.5, 0.5)];
        assert_eq!(hausdorff(&a, &b), hausdorff(&b, &a));
        assert_eq!(hausdorff(&[], &[]), 0.0);
        assert!(hausdorff(&a, &[]).is_infinite());
    }

    #[test]
    fn near_miss_counted_once() {
        // Two FLSs cross: below 0.1 m for 5 consecutive ticks.
        let frames: Vec<Frame> = (0..20)
            .map(|k| {
                let gap = if (8..13).contains(&k) { 0.05 } else { 0.5 };
                Frame { time: k as f64 * 0.1, samples: vec![sample(0, Vec3::ZERO), sample(1, Vec3::new(gap, 0.0, 0.0))] }
            })
            .collect();
        let m = compute_metrics(&frames, &[], 0.1);
        assert_eq!(m.collision_events, 1);
        assert_eq!(m.min_pairwise_distance, 0.05);
    }

    #[test]
    fn uncovered_seconds() {
        let mut frames = Vec::new();
        for k in 0..=10 {
            let mut s = vec![sample(0, Vec3::ZERO), sample(1, Vec3::X)];
            if k >= 5 {
                s[1].role = Role::Failed;
            }
            frames.push(Frame { time: k as f64, samples: s });
        }
        let m = compute_metrics(&frames, &targets()[..2], 0.1);
        assert!((m.uncovered_target_seconds - 6.0).abs() < 1e-12);
    }

    #[test]
    fn log_round_trip() {
        let frames = vec![
            Frame { time: 0.0, samples: vec![sample(0, Vec3::new(0.1, 0.2, 0.3)), sample(1, Vec3::X)] },
            Frame {
                time: 0.01,
                samples: vec![Sample { fls: 0, position: Vec3::new(1.0 / 3.0, 0.0, -2.5), velocity: Vec3::Y, role: Role::ToCharger }],
            },
        ];
        let mut text = String::new();
        for f in &frames {
            write_frame(&mut text, f);
        }
        assert_eq!(parse_trajectory(&text).unwrap(), frames);
        assert!(matches!(parse_trajectory("0 1 2\n"), Err(ScenarioError::LogParse { line: 1, .. })));
    }

    #[test]
    fn period_of_sine() {
        let dt = 0.01;
        let times: Vec<f64> = (0..2000).map(|k| k as f64 * dt).collect();
        let values: Vec<f64> = times.iter().map(|t| (TAU * t / 3.0 + 0.4).sin()).collect();
        assert!((measure_period(&times, &values).unwrap() - 3.0).abs() < 1e-3);
        assert_eq!(measure_period(&times[..10], &values[..10]), None);
    }

    #[test]
    fn tracking_reference_after_warmup() {
        let frames: Vec<Frame> = (0..10)
            .map(|k| Frame { time: k as f64, samples: vec![sample(0, Vec3::new(k as f64, 0.0, 0.0))] })
            .collect();
        let mut acc = MetricsAccumulator::new(vec![], 0.1)
            .with_reference(|_, t| Vec3::new(t, if t < 5.0 { 100.0 } else { 0.1 }, 0.0), 5.0);
        for f in &frames {
            acc.push(f);
        }
        assert!((acc.finish(TransportStats::default()).tracking_rms.unwrap() - 0.1).abs() < 1e-12);
    }
}
