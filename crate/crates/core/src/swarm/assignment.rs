//! FLS-to-target assignment minimizing total travel distance.

use crate::dynamics::Vec3;

use super::SwarmError;

/// Largest problem solved optimally; above it a greedy nearest-pair
/// heuristic is used.
pub const HUNGARIAN_LIMIT: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `by_fls[i]` is the target index of FLS `i`, or `None` for standby.
    pub by_fls: Vec<Option<usize>>,
    /// `by_target[j]` is the FLS covering target `j`.
    pub by_target: Vec<usize>,
    pub total_cost: f64,
    /// False when the greedy fallback was used.
    pub optimal: bool,
}

pub fn assign_targets(fls: &[Vec3], targets: &[Vec3]) -> Result<Assignment, SwarmError> {
    if fls.len() < targets.len() {
        return Err(SwarmError::NotEnoughFls { fls: fls.len(), targets: targets.len() });
    }
    let cost = |t: usize, f: usize| targets[t].distance(fls[f]);
    let optimal = fls.len().max(targets.len()) <= HUNGARIAN_LIMIT;
    let by_target = if targets.is_empty() {
        Vec::new()
    } else if optimal {
        hungarian(targets.len(), fls.len(), cost)
    } else {
        greedy(targets.len(), fls.len(), cost)
    };
    let mut by_fls = vec![None; fls.len()];
    for (t, &f) in by_target.iter().enumerate() {
        by_fls[f] = Some(t);
    }
    let total_cost = by_target.iter().enumerate().map(|(t, &f)| cost(t, f)).sum();
    Ok(Assignment { by_fls, by_target, total_cost, optimal })
}

/// Shortest-augmenting-path Hungarian method with row/column potentials,
/// for `rows ≤ cols`. Returns the column matched to each row.
fn hungarian(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based with a virtual column 0.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut matched_row = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; rows];
    for j in 1..=cols {
        if matched_row[j] != 0 {
            out[matched_row[j] - 1] = j - 1;
        }
    }
    out
}

/// Repeatedly takes the globally closest free (target, FLS) pair. Ties go
/// to the lower target, then the lower FLS index.
fn greedy(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize, usize)> = (0..rows)
        .flat_map(|t| (0..cols).map(move |f| (t, f)))
        .map(|(t, f)| (cost(t, f), t, f))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![usize::MAX; rows];
    let mut taken = vec![false; cols];
    let mut left = rows;
    for (_, t, f) in pairs {
        if left == 0 {
            break;
        }
        if out[t] == usize::MAX && !taken[f] {
            out[t] = f;
            taken[f] = true;
            left -= 1;
        }
    }
    out
}

/// Exhaustive minimum over all injective assignments. Exponential; meant
/// as a reference for small instances.
pub fn brute_force_assignment(fls: &[Vec3], targets: &[Vec3]) -> Option<(f64, Vec<usize>)> {
    fn rec(
        t: usize,
        fls: &[Vec3],
        targets: &[Vec3],
        used: &mut Vec<bool>,
        cur: &mut Vec<usize>,
        acc: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if t == targets.len() {
            if best.as_ref().is_none_or(|b| acc < b.0) {
                *best = Some((acc, cur.clone()));
            }
            return;
        }
        for f in 0..fls.len() {
            if used[f] {
                continue;
            }
            used[f] = true;
            cur.push(f);
            rec(t + 1, fls, targets, used, cur, acc + targets[t].distance(fls[f]), best);
            cur.pop();
            used[f] = false;
        }
    }
    if fls.len() < targets.len() {
        return None;
    }
    let mut best = None;
    rec(0, fls, targets, &mut vec![false; fls.len()], &mut Vec::new(), 0.0, &mut best);
    best
}
