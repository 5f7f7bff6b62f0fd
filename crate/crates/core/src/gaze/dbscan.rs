//! Grid-indexed DBSCAN on 2-D points.

use std::collections::{HashMap, VecDeque};

pub const NOISE: i32 = -1;

fn cell(p: (f64, f64), eps: f64) -> (i64, i64) {
    ((p.0 / eps).floor() as i64, (p.1 / eps).floor() as i64)
}

/// Neighbour lists (self included) using a uniform grid with cell size eps.
fn neighbours(points: &[(f64, f64)], eps: f64) -> Vec<Vec<usize>> {
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        grid.entry(cell(p, eps)).or_default().push(i);
    }
    let eps2 = eps * eps;
    points
        .iter()
        .map(|&p| {
            let (cx, cy) = cell(p, eps);
            let mut out = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy)) {
                        for &j in bucket {
                            let q = points[j];
                            if (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) <= eps2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

/// Cluster labels (`NOISE` for noise) with Euclidean distance ≤ eps.
///
/// A point is core when its eps-neighbourhood, itself included, holds at
/// least `min_pts` points. Clusters are the connected components of core
/// points, numbered in order of their lowest-index core point. A border point
/// joins the cluster of its lowest-index core neighbour, which makes the
/// result independent of traversal order.
pub fn dbscan(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<i32> {
    assert!(eps > 0.0 && min_pts >= 1, "dbscan needs eps > 0 and min_pts ≥ 1");
    let nb = neighbours(points, eps);
    let core: Vec<bool> = nb.iter().map(|n| n.len() >= min_pts).collect();
    let mut labels = vec![NOISE; points.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..points.len() {
        if !core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &nb[p] {
                if core[q] && labels[q] == NOISE {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..points.len() {
        if !core[i] {
            if let Some(&c) = nb[i].iter().find(|&&j| core[j]) {
                labels[i] = labels[c];
            }
        }
    }
    labels
}
