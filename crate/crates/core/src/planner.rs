//! Incremental shortest paths over the fused cost map (D* Lite).
//!
//! The graph is the 8-connected grid. Moving between adjacent cells `a` and
//! `b` costs `len(a, b) * (1 + w * (cost(a) + cost(b)) / 2)` where `len` is 1
//! or √2; cells whose cost exceeds the block threshold are impassable. The
//! search runs backwards from the goal so the start may move between
//! replans. Queue ties break on lower row, then lower column.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::GaussianCostMap;
use crate::grid::{Cell, GridSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("no path to the goal")]
    NoPath,
    #[error("goal cell {0:?} is blocked")]
    GoalBlocked(Cell),
    #[error("start cell {0:?} is blocked")]
    StartBlocked(Cell),
    #[error("cell {0:?} is outside the map")]
    OutOfBounds(Cell),
    #[error("cost weight must be positive, got {0}")]
    InvalidWeight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeModel {
    /// Cost-to-distance tradeoff `w`.
    pub weight: f64,
    /// Cells with cost above this are impassable.
    pub block_threshold: f64,
}

impl Default for EdgeModel {
    fn default() -> Self {
        Self {
            weight: 10.0,
            block_threshold: 0.99,
        }
    }
}

impl EdgeModel {
    pub fn is_blocked(&self, cost: f64) -> bool {
        cost > self.block_threshold
    }
}

#[derive(Debug, Clone)]
pub struct PlanQuery {
    pub start: Cell,
    pub goal: Cell,
    pub map: GaussianCostMap,
    pub edges: EdgeModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub path: Vec<Cell>,
    pub total_cost: f64,
    pub expanded: usize,
}

/// Geometric length of a step between 8-adjacent cells.
#[inline]
pub fn step_length(a: Cell, b: Cell) -> f64 {
    if a.row != b.row && a.col != b.col {
        SQRT_2
    } else {
        1.0
    }
}

/// Cost of moving between 8-adjacent cells; infinite if either is blocked.
pub fn edge_cost(a: Cell, b: Cell, map: &GaussianCostMap, edges: &EdgeModel) -> f64 {
    let (ca, cb) = (map.get(a), map.get(b));
    if edges.is_blocked(ca) || edges.is_blocked(cb) {
        return f64::INFINITY;
    }
    step_length(a, b) * (1.0 + edges.weight * (ca + cb) / 2.0)
}

/// Octile distance, the free-space shortest path length.
pub fn octile(a: Cell, b: Cell) -> f64 {
    let dr = a.row.abs_diff(b.row) as f64;
    let dc = a.col.abs_diff(b.col) as f64;
    let (lo, hi) = if dr < dc { (dr, dc) } else { (dc, dr) };
    (hi - lo) + SQRT_2 * lo
}

/// Sum of edge costs along a path, folded from the goal end.
pub fn path_cost(path: &[Cell], map: &GaussianCostMap, edges: &EdgeModel) -> f64 {
    path.windows(2)
        .rev()
        .fold(0.0, |acc, w| edge_cost(w[0], w[1], map, edges) + acc)
}

// Shrinks the heuristic slightly below the octile bound so rounding in key
// arithmetic never hides a tie-cost node.
const HEURISTIC_SCALE: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, f64);

impl Key {
    fn cmp(&self, other: &Key) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.total_cmp(&other.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    key: Key,
    cell: Cell,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key).then(self.cell.cmp(&other.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Persistent D* Lite search state.
#[derive(Debug, Clone)]
pub struct DStarLite {
    map: GaussianCostMap,
    edges: EdgeModel,
    goal: Cell,
    start: Cell,
    last_start: Cell,
    km: f64,
    g: Vec<f64>,
    rhs: Vec<f64>,
    queued: Vec<Option<Key>>,
    heap: BinaryHeap<Reverse<Entry>>,
    expanded: usize,
}

impl DStarLite {
    pub fn new(query: PlanQuery) -> Result<Self, PlanError> {
        let spec = *query.map.spec();
        for c in [query.start, query.goal] {
            if !spec.contains(c) {
                return Err(PlanError::OutOfBounds(c));
            }
        }
        if !(query.edges.weight > 0.0) {
            return Err(PlanError::InvalidWeight(query.edges.weight));
        }
        let n = spec.len();
        let mut s = Self {
            map: query.map,
            edges: query.edges,
            goal: query.goal,
            start: query.start,
            last_start: query.start,
            km: 0.0,
            g: vec![f64::INFINITY; n],
            rhs: vec![f64::INFINITY; n],
            queued: vec![None; n],
            heap: BinaryHeap::new(),
            expanded: 0,
        };
        let gi = spec.index(s.goal);
        s.rhs[gi] = 0.0;
        let k = s.key(s.goal);
        s.push(s.goal, k);
        Ok(s)
    }

    pub fn map(&self) -> &GaussianCostMap {
        &self.map
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn edges(&self) -> &EdgeModel {
        &self.edges
    }

    fn spec(&self) -> &GridSpec {
        self.map.spec()
    }

    fn h(&self, a: Cell, b: Cell) -> f64 {
        octile(a, b) * HEURISTIC_SCALE
    }

    fn key(&self, s: Cell) -> Key {
        let i = self.spec().index(s);
        let m = self.g[i].min(self.rhs[i]);
        Key(m + self.h(self.start, s) + self.km, m)
    }

    fn push(&mut self, cell: Cell, key: Key) {
        let i = self.spec().index(cell);
        self.queued[i] = Some(key);
        self.heap.push(Reverse(Entry { key, cell }));
    }

    fn remove(&mut self, cell: Cell) {
        let i = self.spec().index(cell);
        self.queued[i] = None;
    }

    fn top(&mut self) -> Option<Entry> {
        while let Some(Reverse(e)) = self.heap.peek().copied() {
            let i = self.spec().index(e.cell);
            if self.queued[i] == Some(e.key) {
                return Some(e);
            }
            self.heap.pop();
        }
        None
    }

    fn cost(&self, a: Cell, b: Cell) -> f64 {
        edge_cost(a, b, &self.map, &self.edges)
    }

    fn best_successor(&self, u: Cell) -> (f64, Option<Cell>) {
        let mut best = (f64::INFINITY, None);
        for n in self.spec().neighbors8(u) {
            let v = self.cost(u, n) + self.g[self.spec().index(n)];
            if v < best.0 {
                best = (v, Some(n));
            }
        }
        best
    }

    fn update_vertex(&mut self, u: Cell) {
        let i = self.spec().index(u);
        if u != self.goal {
            self.rhs[i] = self.best_successor(u).0;
        }
        if self.g[i] != self.rhs[i] {
            let k = self.key(u);
            self.push(u, k);
        } else {
            self.remove(u);
        }
    }

    fn compute_shortest_path(&mut self) {
        loop {
            let si = self.spec().index(self.start);
            let start_key = self.key(self.start);
            let Some(top) = self.top() else { break };
            if top.key.cmp(&start_key) != Ordering::Less && self.rhs[si] == self.g[si] {
                break;
            }
            let u = top.cell;
            let ui = self.spec().index(u);
            let new_key = self.key(u);
            self.expanded += 1;
            if top.key.cmp(&new_key) == Ordering::Less {
                self.heap.pop();
                self.push(u, new_key);
            } else if self.g[ui] > self.rhs[ui] {
                self.g[ui] = self.rhs[ui];
                self.heap.pop();
                self.remove(u);
                let preds: Vec<Cell> = self.spec().neighbors8(u).collect();
                for p in preds {
                    if p != self.goal {
                        let pi = self.spec().index(p);
                        let via = self.cost(p, u) + self.g[ui];
                        if via < self.rhs[pi] {
                            self.rhs[pi] = via;
                        }
                        self.touch(p);
                    }
                }
            } else {
                self.g[ui] = f64::INFINITY;
                let mut affected: Vec<Cell> = self.spec().neighbors8(u).collect();
                affected.push(u);
                for p in affected {
                    self.update_vertex(p);
                }
            }
        }
    }

    /// Re-queue or dequeue `u` after its rhs changed.
    fn touch(&mut self, u: Cell) {
        let i = self.spec().index(u);
        if self.g[i] != self.rhs[i] {
            let k = self.key(u);
            self.push(u, k);
        } else {
            self.remove(u);
        }
    }

    fn check_endpoints(&self) -> Result<(), PlanError> {
        if self.edges.is_blocked(self.map.get(self.goal)) {
            return Err(PlanError::GoalBlocked(self.goal));
        }
        if self.edges.is_blocked(self.map.get(self.start)) {
            return Err(PlanError::StartBlocked(self.start));
        }
        Ok(())
    }

    /// Plan from the current start.
    pub fn plan(&mut self) -> Result<PlanResult, PlanError> {
        self.check_endpoints()?;
        let before = self.expanded;
        self.compute_shortest_path();
        let mut result = self.extract_path()?;
        result.expanded = self.expanded - before;
        Ok(result)
    }

    /// Apply cell cost changes, move the start to `current`, and repair the plan.
    pub fn replan(&mut self, changed: &[(Cell, f64)], current: Cell) -> Result<PlanResult, PlanError> {
        if !self.spec().contains(current) {
            return Err(PlanError::OutOfBounds(current));
        }
        if let Some(&(c, _)) = changed.iter().find(|(c, _)| !self.spec().contains(*c)) {
            return Err(PlanError::OutOfBounds(c));
        }
        self.km += self.h(self.last_start, current);
        self.last_start = current;
        self.start = current;

        let mut dirty = Vec::new();
        for &(cell, cost) in changed {
            let cost = cost.clamp(0.0, 1.0);
            if self.map.get(cell) == cost {
                continue;
            }
            self.map.set(cell, cost);
            dirty.push(cell);
            dirty.extend(self.spec().neighbors8(cell));
        }
        dirty.sort_unstable();
        dirty.dedup();
        for u in dirty {
            self.update_vertex(u);
        }
        self.plan()
    }

    fn extract_path(&self) -> Result<PlanResult, PlanError> {
        let spec = *self.spec();
        if !self.g[spec.index(self.start)].is_finite() {
            return Err(PlanError::NoPath);
        }
        let mut path = vec![self.start];
        let mut cur = self.start;
        while cur != self.goal {
            let (v, next) = self.best_successor(cur);
            let next = match next {
                Some(n) if v.is_finite() => n,
                _ => return Err(PlanError::NoPath),
            };
            path.push(next);
            cur = next;
            if path.len() > spec.len() {
                return Err(PlanError::NoPath);
            }
        }
        Ok(PlanResult {
            total_cost: path_cost(&path, &self.map, &self.edges),
            path,
            expanded: 0,
        })
    }
}

/// One-shot plan.
pub fn plan(query: PlanQuery) -> Result<PlanResult, PlanError> {
    DStarLite::new(query)?.plan()
}

/// Dump a path as `row,col,edge_cost` (edge from the previous cell).
pub fn write_path_csv(result: &PlanResult, map: &GaussianCostMap, edges: &EdgeModel, path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "row,col,edge_cost")?;
    let mut prev: Option<Cell> = None;
    for &c in &result.path {
        let e = prev.map_or(0.0, |p| edge_cost(p, c, map, edges));
        writeln!(f, "{},{},{:.9}", c.row, c.col, e)?;
        prev = Some(c);
    }
    f.flush()
}
