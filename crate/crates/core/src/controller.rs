//! Sampling-based path following (MPPI) for a unicycle robot.
//!
//! Each step perturbs the nominal control sequence with Gaussian noise,
//! rolls every sample through the unicycle model, scores it against the
//! fused cost map and the planned path, and averages the samples with
//! softmin weights `exp(-cost / lambda)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmap::GaussianCostMap;
use crate::grid::GridSpec;
use crate::perception::{normalize_angle, Pose2D};
use crate::planner::PlanResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotLimits {
    pub v_max: f64,
    pub omega_max: f64,
    /// Linear acceleration bound, m/s².
    pub accel_max: f64,
    /// Angular acceleration bound, rad/s².
    pub alpha_max: f64,
}

impl Default for RobotLimits {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: 1.5,
            accel_max: 1.0,
            alpha_max: 3.0,
        }
    }
}

impl RobotLimits {
    pub fn clamp(&self, u: [f64; 2]) -> [f64; 2] {
        [u[0].clamp(-self.v_max, self.v_max), u[1].clamp(-self.omega_max, self.omega_max)]
    }

    pub fn within(&self, u: [f64; 2]) -> bool {
        u[0].abs() <= self.v_max + 1e-12 && u[1].abs() <= self.omega_max + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2D,
    pub v: f64,
    pub omega: f64,
}

impl RobotState {
    pub fn at(pose: Pose2D) -> Self {
        Self { pose, v: 0.0, omega: 0.0 }
    }
}

/// Advance the unicycle one step. Velocities track the command under the
/// acceleration limits; pose integrates the new velocities.
pub fn step_unicycle(state: &RobotState, command: [f64; 2], limits: &RobotLimits, dt: f64) -> RobotState {
    let cmd = limits.clamp(command);
    let dv = (cmd[0] - state.v).clamp(-limits.accel_max * dt, limits.accel_max * dt);
    let dw = (cmd[1] - state.omega).clamp(-limits.alpha_max * dt, limits.alpha_max * dt);
    let v = (state.v + dv).clamp(-limits.v_max, limits.v_max);
    let omega = (state.omega + dw).clamp(-limits.omega_max, limits.omega_max);
    let th = state.pose.heading;
    RobotState {
        pose: Pose2D {
            x: state.pose.x + v * th.cos() * dt,
            y: state.pose.y + v * th.sin() * dt,
            heading: normalize_angle(th + omega * dt),
        },
        v,
        omega,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    pub controls: Vec<[f64; 2]>,
    pub dt: f64,
}

impl ControlSequence {
    pub fn zeros(horizon: usize, dt: f64) -> Self {
        Self {
            controls: vec![[0.0, 0.0]; horizon.max(1)],
            dt,
        }
    }

    pub fn constant(horizon: usize, dt: f64, u: [f64; 2]) -> Self {
        Self {
            controls: vec![u; horizon.max(1)],
            dt,
        }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn first(&self) -> [f64; 2] {
        self.controls[0]
    }

    /// Drop the first command and repeat the last.
    pub fn shifted(&self) -> Self {
        let mut controls: Vec<[f64; 2]> = self.controls.iter().skip(1).copied().collect();
        controls.push(*self.controls.last().expect("horizon >= 1"));
        Self { controls, dt: self.dt }
    }
}

/// Planned path as a world-frame polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrack {
    points: Vec<[f64; 2]>,
    arc: Vec<f64>,
}

impl PathTrack {
    /// Collinear interior points are dropped; the polyline is unchanged.
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        let points = drop_collinear(points);
        let mut arc = Vec::with_capacity(points.len());
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                total += dist(points[i - 1], *p);
            }
            arc.push(total);
        }
        Self { points, arc }
    }

    pub fn from_plan(plan: &PlanResult, spec: &GridSpec) -> Self {
        Self::new(plan.path.iter().map(|&c| spec.world_of(c)).collect())
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.arc.last().copied().unwrap_or(0.0)
    }

    /// Distance from `p` to the polyline and the arc length of its projection.
    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        match self.points.len() {
            0 => (0.0, 0.0),
            1 => (dist(self.points[0], p), 0.0),
            _ => {
                let mut best = (f64::INFINITY, 0, 0.0);
                for i in 0..self.points.len() - 1 {
                    let (a, b) = (self.points[i], self.points[i + 1]);
                    let ab = [b[0] - a[0], b[1] - a[1]];
                    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
                    let t = if len2 > 0.0 {
                        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let (dx, dy) = (p[0] - a[0] - t * ab[0], p[1] - a[1] - t * ab[1]);
                    let d2 = dx * dx + dy * dy;
                    if d2 < best.0 {
                        best = (d2, i, t);
                    }
                }
                let (d2, i, t) = best;
                (d2.sqrt(), self.arc[i] + t * (self.arc[i + 1] - self.arc[i]))
            }
        }
    }

    /// Arc length still to go from the projection of `p`.
    pub fn remaining(&self, p: [f64; 2]) -> f64 {
        self.length() - self.project(p).1
    }
}

fn drop_collinear(points: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(points.len());
    for p in points {
        if let [.., a, b] = out[..] {
            let cross = (b[0] - a[0]) * (p[1] - b[1]) - (b[1] - a[1]) * (p[0] - b[0]);
            let dot = (b[0] - a[0]) * (p[0] - b[0]) + (b[1] - a[1]) * (p[1] - b[1]);
            if cross.abs() < 1e-12 && dot >= 0.0 {
                out.pop();
            }
        }
        out.push(p);
    }
    out
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    /// Weight on fused-map cost under each rollout state.
    pub map: f64,
    /// Weight on distance to the planned path.
    pub path: f64,
    /// Weight on `v² + ω²`.
    pub control: f64,
    /// Terminal weight on arc length left to the goal.
    pub progress: f64,
    /// Penalty per step spent in a blocked or off-map cell.
    pub block_penalty: f64,
    pub block_threshold: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            map: 10.0,
            path: 2.0,
            control: 0.05,
            progress: 15.0,
            block_penalty: 1000.0,
            block_threshold: 0.99,
        }
    }
}

/// Roll `controls` out from `state` and return the visited states.
pub fn simulate(state: &RobotState, controls: &ControlSequence, limits: &RobotLimits) -> Vec<RobotState> {
    let mut out = Vec::with_capacity(controls.horizon());
    let mut s = *state;
    for &u in &controls.controls {
        s = step_unicycle(&s, u, limits, controls.dt);
        out.push(s);
    }
    out
}

pub fn rollout_cost(
    state: &RobotState,
    controls: &ControlSequence,
    map: &GaussianCostMap,
    path: &PathTrack,
    weights: &CostWeights,
    limits: &RobotLimits,
) -> f64 {
    let mut total = 0.0;
    let mut s = *state;
    for &u in &controls.controls {
        s = step_unicycle(&s, u, limits, controls.dt);
        let p = s.pose.position();
        let c = map.cost_at_world(p, 1.0);
        if c >= weights.block_threshold {
            total += weights.block_penalty;
        }
        let (d, _) = path.project(p);
        total += weights.map * c + weights.path * d + weights.control * (s.v * s.v + s.omega * s.omega);
    }
    total + weights.progress * path.remaining(s.pose.position())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MppiConfig {
    pub samples: usize,
    pub horizon: usize,
    pub dt: f64,
    /// Softmin temperature.
    pub lambda: f64,
    /// Standard deviation of the (v, ω) perturbations.
    pub noise_std: [f64; 2],
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            samples: 256,
            horizon: 30,
            dt: 0.1,
            lambda: 1.0,
            noise_std: [0.3, 0.6],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MppiOutput {
    pub command: [f64; 2],
    /// Weighted-average sequence, aligned with the current step.
    pub optimized: ControlSequence,
    /// `optimized` shifted by one step, ready for the next call.
    pub nominal: ControlSequence,
    pub weights: Vec<f64>,
    pub costs: Vec<f64>,
    /// Every sample was blocked; the command is a stop.
    pub stuck: bool,
}

/// Softmin importance weights, normalized to sum to one.
pub fn softmin_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = costs.iter().map(|&c| (-(c - min) / lambda).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn mppi_step(
    state: &RobotState,
    nominal: &ControlSequence,
    map: &GaussianCostMap,
    path: &PathTrack,
    config: &MppiConfig,
    weights: &CostWeights,
    limits: &RobotLimits,
    seed: u64,
) -> MppiOutput {
    assert!(config.samples >= 1, "MPPI needs at least one sample");
    assert!(config.lambda > 0.0, "MPPI temperature must be positive");
    let h = nominal.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nv = Normal::new(0.0, config.noise_std[0].max(0.0)).expect("finite noise");
    let nw = Normal::new(0.0, config.noise_std[1].max(0.0)).expect("finite noise");

    // Sample 0 is the unperturbed nominal.
    let samples: Vec<ControlSequence> = (0..config.samples)
        .map(|k| ControlSequence {
            controls: nominal
                .controls
                .iter()
                .map(|&u| {
                    if k == 0 {
                        limits.clamp(u)
                    } else {
                        limits.clamp([u[0] + nv.sample(&mut rng), u[1] + nw.sample(&mut rng)])
                    }
                })
                .collect(),
            dt: nominal.dt,
        })
        .collect();

    let costs: Vec<f64> = samples
        .par_iter()
        .map(|seq| rollout_cost(state, seq, map, path, weights, limits))
        .collect();

    let stuck = costs.iter().all(|&c| c >= weights.block_penalty);
    let w = softmin_weights(&costs, config.lambda);
    let mut optimized = ControlSequence::zeros(h, nominal.dt);
    for (seq, &wk) in samples.iter().zip(&w) {
        for (o, u) in optimized.controls.iter_mut().zip(&seq.controls) {
            o[0] += wk * u[0];
            o[1] += wk * u[1];
        }
    }
    for o in &mut optimized.controls {
        *o = limits.clamp(*o);
    }

    if stuck {
        return MppiOutput {
            command: [0.0, 0.0],
            nominal: ControlSequence::zeros(h, nominal.dt),
            optimized,
            weights: w,
            costs,
            stuck,
        };
    }
    MppiOutput {
        command: optimized.first(),
        nominal: optimized.shifted(),
        optimized,
        weights: w,
        costs,
        stuck,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Cell, GridSpec};
    use approx::assert_abs_diff_eq;

    fn open_map() -> GaussianCostMap {
        GaussianCostMap::zeros(GridSpec::new(40, 80, 0.1, [0.0, 0.0]).unwrap())
    }

    fn straight_path() -> PathTrack {
        PathTrack::new((0..=70).map(|i| [0.5 + i as f64 * 0.1, 2.0]).collect())
    }

    #[test]
    fn unicycle_respects_limits() {
        let l = RobotLimits::default();
        let s = step_unicycle(&RobotState::default(), [5.0, 5.0], &l, 0.1);
        assert_abs_diff_eq!(s.v, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(s.omega, 0.3, epsilon = 1e-12);
        let mut s = RobotState::default();
        for _ in 0..100 {
            s = step_unicycle(&s, [5.0, -5.0], &l, 0.1);
        }
        assert_eq!(s.v, l.v_max);
        assert_eq!(s.omega, -l.omega_max);
    }

    #[test]
    fn stationary_on_path_costs_nothing() {
        // at the goal vertex; progress term vanishes too
        let path = straight_path();
        let goal = *path.points().last().unwrap();
        let s = RobotState::at(Pose2D::new(goal[0], goal[1], 0.0));
        let c = rollout_cost(&s, &ControlSequence::zeros(30, 0.1), &open_map(), &path, &CostWeights::default(), &RobotLimits::default());
        assert_eq!(c, 0.0);
        // interior vertex with the progress term off
        let s = RobotState::at(Pose2D::new(1.5, 2.0, 0.0));
        let w = CostWeights { progress: 0.0, ..CostWeights::default() };
        let c = rollout_cost(&s, &ControlSequence::zeros(30, 0.1), &open_map(), &path, &w, &RobotLimits::default());
        assert_eq!(c, 0.0);
    }

    #[test]
    fn obstacle_rollout_pays_block_penalty() {
        let mut m = open_map();
        for r in 0..40 {
            for c in 20..25 {
                m.set(Cell::new(r, c), 1.0);
            }
        }
        let s = RobotState {
            pose: Pose2D::new(1.5, 2.0, 0.0),
            v: 1.0,
            omega: 0.0,
        };
        let w = CostWeights::default();
        let c = rollout_cost(&s, &ControlSequence::constant(30, 0.1, [1.0, 0.0]), &m, &straight_path(), &w, &RobotLimits::default());
        assert!(c >= w.block_penalty);
    }

    #[test]
    fn softmin_picks_cheap_sample() {
        let w = softmin_weights(&[3.0, 1003.0], 1.0);
        assert_eq!(w, vec![1.0, 0.0]);
        let w = softmin_weights(&[1.0, 2.0, 3.0], 1.0);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[0] / w[1], std::f64::consts::E, epsilon = 1e-12);
    }

    #[test]
    fn single_noise_free_sample_returns_nominal() {
        let nominal = ControlSequence::constant(10, 0.1, [0.4, -0.2]);
        let cfg = MppiConfig {
            samples: 1,
            horizon: 10,
            noise_std: [0.0, 0.0],
            ..MppiConfig::default()
        };
        let s = RobotState::at(Pose2D::new(1.0, 2.0, 0.0));
        let out = mppi_step(&s, &nominal, &open_map(), &straight_path(), &cfg, &CostWeights::default(), &RobotLimits::default(), 7);
        assert_eq!(out.command, [0.4, -0.2]);
        assert_eq!(out.weights, vec![1.0]);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let nominal = ControlSequence::zeros(30, 0.1);
        let s = RobotState::at(Pose2D::new(1.0, 2.1, 0.1));
        let run = || {
            mppi_step(&s, &nominal, &open_map(), &straight_path(), &MppiConfig::default(), &CostWeights::default(), &RobotLimits::default(), 42)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn all_blocked_stops() {
        let m = GaussianCostMap::from_values(*open_map().spec(), vec![1.0; 3200]).unwrap();
        let s = RobotState::at(Pose2D::new(1.0, 2.0, 0.0));
        let out = mppi_step(&s, &ControlSequence::zeros(10, 0.1), &m, &straight_path(), &MppiConfig { samples: 16, ..MppiConfig::default() }, &CostWeights::default(), &RobotLimits::default(), 1);
        assert!(out.stuck);
        assert_eq!(out.command, [0.0, 0.0]);
    }

    #[test]
    fn path_projection() {
        let p = straight_path();
        let (d, s) = p.project([1.0, 2.3]);
        assert_abs_diff_eq!(d, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(p.remaining([7.5, 2.0]), 0.0, epsilon = 1e-9);
    }
}
