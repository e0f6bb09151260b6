//! One-to-one assignment of predictions to ground truth.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Maximum number of matches, then maximum total IoU.
    #[default]
    Hungarian,
    /// Descending confidence, each prediction takes its best free target.
    Greedy,
}

/// Match over an IoU matrix (`ious[pred][gt]`). A pair is eligible when its
/// IoU is at least `threshold`. Output is sorted by prediction index.
pub fn match_pairs(ious: &[Vec<f64>], confidences: &[f64], threshold: f64, mode: Matching) -> Vec<(usize, usize)> {
    let n = ious.len();
    let m = ious.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    match mode {
        Matching::Hungarian => hungarian_match(ious, threshold),
        Matching::Greedy => greedy_match(ious, confidences, threshold),
    }
}

fn hungarian_match(ious: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize)> {
    let n = ious.len();
    let m = ious[0].len();
    // Every eligible pair is worth more than any possible IoU total, so the
    // optimum maximizes the match count first.
    let bonus = (n.min(m) + 1) as f64;
    let eligible = |i: usize, j: usize| ious[i][j] >= threshold;
    let cost = |i: usize, j: usize| if eligible(i, j) { -(bonus + ious[i][j]) } else { 0.0 };

    let mut pairs: Vec<(usize, usize)> = if n <= m {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| cost(i, j)).collect()).collect();
        min_cost_assignment(&rows)
            .into_iter()
            .enumerate()
            .map(|(i, j)| (i, j))
            .collect()
    } else {
        let rows: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost(i, j)).collect()).collect();
        min_cost_assignment(&rows)
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect()
    };
    pairs.retain(|&(i, j)| eligible(i, j));
    pairs.sort_unstable();
    pairs
}

fn greedy_match(ious: &[Vec<f64>], confidences: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let n = ious.len();
    let m = ious[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ca = confidences.get(a).copied().unwrap_or(0.0);
        let cb = confidences.get(b).copied().unwrap_or(0.0);
        cb.total_cmp(&ca).then(a.cmp(&b))
    });
    let mut claimed = vec![false; m];
    let mut pairs = Vec::new();
    for i in order {
        let mut best: Option<usize> = None;
        for j in 0..m {
            if claimed[j] || ious[i][j] < threshold {
                continue;
            }
            if best.is_none_or(|b| ious[i][j] > ious[i][b]) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            claimed[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Shortest-augmenting-path Hungarian algorithm for a rectangular cost
/// matrix with `rows <= cols`. Returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "min_cost_assignment needs rows <= cols");
    // 1-based potentials; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}
