//! Point-cloud ingestion (XYZRGB text or ASCII PLY), export and
//! farthest-point downsampling.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Vec3;
use crate::swarm::Rgb;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("line {line}: {detail}")]
    ParseError { line: usize, detail: String },
    #[error("header declares {declared} vertices, body has {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<(Vec3, Rgb)>,
}

impl PointCloud {
    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// XYZRGB text, one point per line.
    pub fn to_xyzrgb(&self) -> String {
        let mut out = String::new();
        for (p, Rgb(r, g, b)) in &self.points {
            writeln!(out, "{} {} {} {r} {g} {b}", p.x, p.y, p.z).expect("write to string");
        }
        out
    }
}

pub fn load_pointcloud(path: &Path) -> Result<PointCloud, CloudError> {
    parse_pointcloud(&std::fs::read_to_string(path)?)
}

pub fn parse_pointcloud(text: &str) -> Result<PointCloud, CloudError> {
    let cloud = if text.trim_start().starts_with("ply") {
        parse_ply(text)?
    } else {
        parse_xyzrgb(text)?
    };
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    Ok(cloud)
}

fn parse_err(line: usize, detail: impl Into<String>) -> CloudError {
    CloudError::ParseError { line, detail: detail.into() }
}

fn parse_coord(tok: &str, line: usize) -> Result<f64, CloudError> {
    let v: f64 = tok.parse().map_err(|_| parse_err(line, format!("bad number {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, "non-finite coordinate"));
    }
    Ok(v)
}

fn parse_channel(tok: &str, line: usize) -> Result<u8, CloudError> {
    tok.parse().map_err(|_| parse_err(line, format!("bad color channel {tok:?}")))
}

fn parse_xyzrgb(text: &str) -> Result<PointCloud, CloudError> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let f: Vec<&str> = body.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_err(line, format!("expected 6 fields, found {}", f.len())));
        }
        let p = Vec3::new(parse_coord(f[0], line)?, parse_coord(f[1], line)?, parse_coord(f[2], line)?);
        let c = Rgb(parse_channel(f[3], line)?, parse_channel(f[4], line)?, parse_channel(f[5], line)?);
        points.push((p, c));
    }
    Ok(PointCloud { points })
}

fn parse_ply(text: &str) -> Result<PointCloud, CloudError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut declared = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut saw_format = false;
    for (line, l) in lines.by_ref() {
        let f: Vec<&str> = l.split_whitespace().collect();
        match f.as_slice() {
            ["ply"] | [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", ..] => return Err(parse_err(line, "only ascii 1.0 PLY is supported")),
            ["element", "vertex", n] => {
                declared = Some(n.parse::<usize>().map_err(|_| parse_err(line, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", .., name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(parse_err(line, format!("unexpected header line {l:?}"))),
        }
    }
    if !saw_format {
        return Err(parse_err(1, "missing format line"));
    }
    let declared = declared.ok_or_else(|| parse_err(1, "missing vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (Some(xi), Some(yi), Some(zi)) = (col("x"), col("y"), col("z")) else {
        return Err(parse_err(1, "vertex needs x, y and z properties"));
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };
    let mut points = Vec::with_capacity(declared);
    let mut found = 0;
    for (line, l) in lines {
        if l.is_empty() {
            continue;
        }
        found += 1;
        if found > declared {
            // Trailing elements (faces) are ignored.
            continue;
        }
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() < props.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", props.len(), f.len())));
        }
        let p = Vec3::new(parse_coord(f[xi], line)?, parse_coord(f[yi], line)?, parse_coord(f[zi], line)?);
        let c = match rgb {
            Some((r, g, b)) => Rgb(parse_channel(f[r], line)?, parse_channel(f[g], line)?, parse_channel(f[b], line)?),
            None => Rgb::default(),
        };
        points.push((p, c));
    }
    if found < declared {
        return Err(CloudError::CountMismatch { declared, found });
    }
    Ok(PointCloud { points })
}

/// Farthest-point sampling. Starts from the lexicographically smallest
/// point and repeatedly adds the point farthest from the chosen set (ties to
/// the lower index). `n ≥ |cloud|` returns the cloud unchanged. The seed is
/// accepted for interface stability; the sampler is deterministic.
pub fn downsample(cloud: &PointCloud, n: usize, _seed: u64) -> PointCloud {
    let pts = &cloud.points;
    if n >= pts.len() {
        return cloud.clone();
    }
    if n == 0 {
        return PointCloud::default();
    }
    let first = (0..pts.len())
        .min_by(|&a, &b| {
            let (p, q) = (pts[a].0, pts[b].0);
            p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)).then(p.z.total_cmp(&q.z)).then(a.cmp(&b))
        })
        .expect("nonempty");
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = pts.iter().map(|p| p.0.distance(pts[first].0)).collect();
    while chosen.len() < n {
        let mut best = 0;
        for i in 1..pts.len() {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        chosen.push(best);
        let c = pts[best].0;
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(pts[i].0.distance(c));
        }
    }
    PointCloud { points: chosen.into_iter().map(|i| pts[i]).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSphere {
    pub center: Vec3,
    pub radius: f64,
    pub count: usize,
}

/// Evenly spread points on a sphere (golden-angle spiral).
pub fn sphere_cloud(s: &SyntheticSphere) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let n = s.count.max(1);
    let points = (0..n)
        .map(|i| {
            let z = if n == 1 { 0.0 } else { 1.0 - 2.0 * i as f64 / (n - 1) as f64 };
            let r = (1.0 - z * z).max(0.0).sqrt();
            let th = golden * i as f64;
            let p = s.center + Vec3::new(r * th.cos(), r * th.sin(), z) * s.radius;
            let shade = (255.0 * (z + 1.0) / 2.0).round() as u8;
            (p, Rgb(255, shade, 255 - shade))
        })
        .collect();
    PointCloud { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{seq::index::sample, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn min_pairwise(p: &[Vec3]) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                m = m.min(p[i].distance(p[j]));
            }
        }
        m
    }

    #[test]
    fn three_line_xyzrgb() {
        let c = parse_pointcloud("# header\n0 0 0 255 0 0\n1 0 0 0 255 0 # inline\n\n0 1 0 0 0 255\n").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.points[1], (Vec3::X, Rgb(0, 255, 0)));
    }

    #[test]
    fn too_few_fields() {
        match parse_pointcloud("1.0 2.0\n") {
            Err(CloudError::ParseError { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_pointcloud("0 0 0 300 0 0\n"), Err(CloudError::ParseError { .. })));
        assert!(matches!(parse_pointcloud("# nothing\n"), Err(CloudError::EmptyCloud)));
    }

    const PLY_HEAD: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";

    #[test]
    fn ply_count_mismatch() {
        let body = "0 0 0 1 2 3\n1 0 0 1 2 3\n2 0 0 1 2 3\n3 0 0 1 2 3\n";
        assert!(matches!(
            parse_pointcloud(&format!("{PLY_HEAD}{body}")),
            Err(CloudError::CountMismatch { declared: 5, found: 4 })
        ));
        let ok = parse_pointcloud(&format!("{PLY_HEAD}{body}4 0 0 9 8 7\n")).unwrap();
        assert_eq!(ok.len(), 5);
        assert_eq!(ok.points[4].1, Rgb(9, 8, 7));
    }

    #[test]
    fn ply_without_color() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n";
        let c = parse_pointcloud(text).unwrap();
        assert_eq!(c.points[1], (Vec3::new(1.0, 2.0, 3.0), Rgb::default()));
    }

    #[test]
    fn xyzrgb_round_trip() {
        let c = sphere_cloud(&SyntheticSphere { center: Vec3::new(0.1, 0.2, 0.3), radius: 0.7, count: 50 });
        assert_eq!(parse_pointcloud(&c.to_xyzrgb()).unwrap(), c);
    }

    #[test]
    fn downsample_identity_when_large() {
        let c = sphere_cloud(&SyntheticSphere { center: Vec3::ZERO, radius: 1.0, count: 10 });
        assert_eq!(downsample(&c, 10, 0), c);
        assert_eq!(downsample(&c, 50, 0), c);
    }

    #[test]
    fn square_corners_pick_diagonal() {
        let pts = [Vec3::new(1.0, 1.0, 0.0), Vec3::ZERO, Vec3::X, Vec3::Y];
        let c = PointCloud { points: pts.iter().map(|&p| (p, Rgb::default())).collect() };
        let d = downsample(&c, 2, 0);
        assert_eq!(d.positions(), vec![Vec3::ZERO, Vec3::new(1.0, 1.0, 0.0)]);
    }

    #[test]
    fn fps_beats_random_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = PointCloud {
            points: (0..1000)
                .map(|_| (Vec3::new(rng.random(), rng.random(), rng.random()), Rgb::default()))
                .collect(),
        };
        let fps = min_pairwise(&downsample(&cloud, 50, 0).positions());
        let mut random: Vec<f64> = (0..100)
            .map(|_| {
                let idx = sample(&mut rng, 1000, 50);
                min_pairwise(&idx.iter().map(|i| cloud.points[i].0).collect::<Vec<_>>())
            })
            .collect();
        random.sort_by(f64::total_cmp);
        assert!(fps >= random[50], "fps {fps} median {}", random[50]);
    }

    #[test]
    fn downsample_ignores_seed() {
        let c = sphere_cloud(&SyntheticSphere { center: Vec3::ZERO, radius: 1.0, count: 200 });
        assert_eq!(downsample(&c, 20, 1), downsample(&c, 20, 99));
    }
}
