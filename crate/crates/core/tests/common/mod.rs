//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Direct double loop over (cell, hazard) with its own sigma formula.
pub fn brute_force_costs(
    rows: usize,
    cols: usize,
    hazards: &[(usize, usize, u8)],
    sigma0: f64,
    temperature: f64,
    sigma_min: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut best: f64 = 0.0;
            for &(hr, hc, a) in hazards {
                let sigma = (sigma0 * (a as f64 / temperature).ln()).max(sigma_min);
                let d2 = (r as f64 - hr as f64).powi(2) + (c as f64 - hc as f64).powi(2);
                let v = (-d2 / (2.0 * sigma * sigma)).exp() * a as f64 / 3.0;
                best = best.max(v.min(1.0));
            }
            out[r * cols + c] = best;
        }
    }
    out
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Textbook Dijkstra from the goal over an 8-connected `n x n` grid.
/// Returns cost-to-goal per cell, infinite where unreachable.
pub fn dijkstra_to_goal(n: usize, costs: &[f64], goal: (usize, usize), weight: f64, threshold: f64) -> Vec<f64> {
    let blocked = |i: usize| costs[i] > threshold;
    let mut dist = vec![f64::INFINITY; n * n];
    let g = goal.0 * n + goal.1;
    if blocked(g) {
        return dist;
    }
    dist[g] = 0.0;
    let mut heap = BinaryHeap::from([Item(0.0, g)]);
    while let Some(Item(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        let (r, c) = ((i / n) as i64, (i % n) as i64);
        for dr in -1..=1i64 {
            for dc in -1..=1i64 {
                let (nr, nc) = (r + dr, c + dc);
                if (dr, dc) == (0, 0) || nr < 0 || nc < 0 || nr >= n as i64 || nc >= n as i64 {
                    continue;
                }
                let j = nr as usize * n + nc as usize;
                if blocked(j) {
                    continue;
                }
                let len = if dr != 0 && dc != 0 { 2f64.sqrt() } else { 1.0 };
                // edge from j towards the goal, added in front of the goal-side sum
                let nd = len * (1.0 + weight * (costs[j] + costs[i]) / 2.0) + d;
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(Item(nd, j));
                }
            }
        }
    }
    dist
}
