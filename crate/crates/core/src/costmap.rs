//! Layered maps and the hazard cost math.
//!
//! Three layers share one [`GridSpec`]: a binary [`ObstacleMap`], an integer
//! [`AnxietyScoreMap`] with scores in `0..=3`, and a continuous
//! [`GaussianCostMap`] in `[0, 1]`. Every hazard cell spawns an isotropic
//! Gaussian whose spread is scaled logarithmically by its anxiety score; the
//! per-hazard fields are max-combined and then max-fused with the obstacle
//! layer so obstacles stay at exactly 1.

use serde::{Deserialize, Serialize};

use crate::error::MapError;
use crate::grid::{Cell, Grid, GridSpec};

/// Integer hazard severity. `0` means no hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Anxiety(u8);

impl Anxiety {
    pub const NONE: Anxiety = Anxiety(0);
    pub const LOW: Anxiety = Anxiety(1);
    pub const MEDIUM: Anxiety = Anxiety(2);
    pub const HIGH: Anxiety = Anxiety(3);
    pub const MAX: u8 = 3;

    pub fn new(value: u8) -> Result<Self, MapError> {
        if value > Self::MAX {
            return Err(MapError::AnxietyOutOfRange(value));
        }
        Ok(Self(value))
    }

    /// Nearest valid hazard score in `1..=3`.
    pub fn clamp_hazard(value: i64) -> Self {
        Self(value.clamp(1, Self::MAX as i64) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_hazard(self) -> bool {
        self.0 > 0
    }
}

impl TryFrom<u8> for Anxiety {
    type Error = MapError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Anxiety::new(v)
    }
}

impl From<Anxiety> for u8 {
    fn from(a: Anxiety) -> u8 {
        a.0
    }
}

/// Binary occupancy layer: 0 free, 1 obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMap {
    grid: Grid<u8>,
}

impl ObstacleMap {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            grid: Grid::filled(spec, 0),
        }
    }

    pub fn from_cells(spec: GridSpec, cells: Vec<u8>) -> Result<Self, MapError> {
        if let Some(&bad) = cells.iter().find(|&&v| v > 1) {
            return Err(MapError::ObstacleValue(bad));
        }
        Ok(Self {
            grid: Grid::from_vec(spec, cells)?,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        *self.grid.at(cell) == 1
    }

    pub fn set(&mut self, cell: Cell, occupied: bool) {
        *self.grid.at_mut(cell) = occupied as u8;
    }

    pub fn cells(&self) -> &[u8] {
        self.grid.as_slice()
    }

    pub fn count(&self) -> usize {
        self.grid.as_slice().iter().filter(|&&v| v == 1).count()
    }

    /// Grow every obstacle by a disc of `radius` cells (footprint inflation).
    pub fn dilate(&self, radius: f64) -> ObstacleMap {
        let spec = *self.spec();
        let offsets = disc_offsets(radius);
        let mut out = ObstacleMap::empty(spec);
        for (cell, &v) in self.grid.iter() {
            if v != 1 {
                continue;
            }
            for &(dr, dc) in &offsets {
                if let Some(n) = offset_cell(&spec, cell, dr, dc) {
                    out.set(n, true);
                }
            }
        }
        out
    }
}

/// Integer anxiety layer; cells with a score above zero form the hazard set.
#[derive(Debug, Clone, PartialEq)]
pub struct AnxietyScoreMap {
    grid: Grid<Anxiety>,
}

impl AnxietyScoreMap {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            grid: Grid::filled(spec, Anxiety::NONE),
        }
    }

    pub fn from_cells(spec: GridSpec, cells: Vec<u8>) -> Result<Self, MapError> {
        let cells = cells
            .into_iter()
            .map(Anxiety::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            grid: Grid::from_vec(spec, cells)?,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }

    pub fn get(&self, cell: Cell) -> Anxiety {
        *self.grid.at(cell)
    }

    pub fn set(&mut self, cell: Cell, anxiety: Anxiety) {
        *self.grid.at_mut(cell) = anxiety;
    }

    pub fn hazards(&self) -> impl Iterator<Item = (Cell, Anxiety)> + '_ {
        self.grid
            .iter()
            .filter(|(_, a)| a.is_hazard())
            .map(|(c, &a)| (c, a))
    }

    pub fn hazard_count(&self) -> usize {
        self.hazards().count()
    }
}

/// Continuous cost layer with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCostMap {
    grid: Grid<f64>,
}

impl GaussianCostMap {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            grid: Grid::filled(spec, 0.0),
        }
    }

    /// Values are clamped into `[0, 1]`; NaN is rejected.
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, MapError> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(MapError::Format("NaN cost value".into()));
        }
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            grid: Grid::from_vec(spec, values)?,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }

    pub fn get(&self, cell: Cell) -> f64 {
        *self.grid.at(cell)
    }

    pub fn set(&mut self, cell: Cell, value: f64) {
        *self.grid.at_mut(cell) = value.clamp(0.0, 1.0);
    }

    /// Cost at a world point; points outside the map read as `outside`.
    pub fn cost_at_world(&self, world: [f64; 2], outside: f64) -> f64 {
        match self.spec().grid_of(world) {
            Some(c) => self.get(c),
            None => outside,
        }
    }

    pub fn values(&self) -> &[f64] {
        self.grid.as_slice()
    }
}

/// How far each hazard's Gaussian is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Evaluate every hazard against every cell.
    Exact,
    /// Skip cells farther than this many (updated) sigmas from the hazard.
    Sigmas(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianParams {
    /// Base standard deviation, in cells.
    pub sigma0: f64,
    /// Spread temperature; must satisfy `0 < T < 1`.
    pub temperature: f64,
    /// Floor on the updated sigma, in cells.
    pub sigma_min: f64,
    pub truncation: Truncation,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            sigma0: 3.0,
            temperature: 0.5,
            sigma_min: 0.5,
            truncation: Truncation::Sigmas(4.0),
        }
    }
}

impl GaussianParams {
    pub fn exact(self) -> Self {
        Self {
            truncation: Truncation::Exact,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(MapError::InvalidParams(format!("sigma0 must be > 0, got {}", self.sigma0)));
        }
        if !(self.temperature > 0.0 && self.temperature < 1.0) {
            return Err(MapError::InvalidParams(format!(
                "temperature must lie in (0, 1), got {}",
                self.temperature
            )));
        }
        if !(self.sigma_min.is_finite() && self.sigma_min > 0.0) {
            return Err(MapError::InvalidParams(format!(
                "sigma_min must be > 0, got {}",
                self.sigma_min
            )));
        }
        if let Truncation::Sigmas(k) = self.truncation {
            if !(k.is_finite() && k > 0.0) {
                return Err(MapError::InvalidParams(format!("truncation must be > 0 sigmas, got {k}")));
            }
        }
        Ok(())
    }
}

/// `max(sigma * ln(anxiety / T), sigma_min)` without domain checks.
pub(crate) fn log_scaled_sigma(sigma: f64, anxiety: f64, temperature: f64, sigma_min: f64) -> f64 {
    (sigma * (anxiety / temperature).ln()).max(sigma_min)
}

/// Anxiety-scaled spread of a hazard's Gaussian.
pub fn update_sigma(sigma: f64, anxiety: Anxiety, params: &GaussianParams) -> Result<f64, MapError> {
    if !anxiety.is_hazard() {
        return Err(MapError::ZeroAnxiety);
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(MapError::InvalidParams(format!("sigma must be > 0, got {sigma}")));
    }
    params.validate()?;
    Ok(log_scaled_sigma(
        sigma,
        anxiety.get() as f64,
        params.temperature,
        params.sigma_min,
    ))
}

/// Contribution of one hazard cell to a query cell.
pub fn gaussian_cost_at(hazard: Cell, anxiety: Anxiety, sigma: f64, query: Cell) -> f64 {
    let d = hazard.distance(query);
    kernel_value(d * d, anxiety, sigma)
}

#[inline]
fn kernel_value(d2: f64, anxiety: Anxiety, sigma: f64) -> f64 {
    let scale = anxiety.get() as f64 / Anxiety::MAX as f64;
    ((-0.5 * d2 / (sigma * sigma)).exp() * scale).clamp(0.0, 1.0)
}

/// Max-combined Gaussian field over every hazard cell of `anxiety_map`.
pub fn propagate_costs(
    anxiety_map: &AnxietyScoreMap,
    params: &GaussianParams,
) -> Result<GaussianCostMap, MapError> {
    params.validate()?;
    let spec = *anxiety_map.spec();
    let mut out = GaussianCostMap::zeros(spec);

    // Each anxiety level has one sigma, hence one stencil.
    let mut sigmas = [0.0; 4];
    for a in 1..=Anxiety::MAX {
        sigmas[a as usize] = update_sigma(params.sigma0, Anxiety(a), params)?;
    }

    match params.truncation {
        Truncation::Exact => {
            for (hazard, a) in anxiety_map.hazards() {
                let sigma = sigmas[a.get() as usize];
                for (i, v) in out.grid.as_mut_slice().iter_mut().enumerate() {
                    let c = gaussian_cost_at(hazard, a, sigma, spec.cell_at(i));
                    if c > *v {
                        *v = c;
                    }
                }
            }
        }
        Truncation::Sigmas(k) => {
            let stencils: Vec<Vec<(isize, isize, f64)>> = (0..=Anxiety::MAX)
                .map(|a| {
                    if a == 0 {
                        return Vec::new();
                    }
                    let sigma = sigmas[a as usize];
                    disc_offsets(k * sigma)
                        .into_iter()
                        .map(|(dr, dc)| {
                            let d2 = (dr * dr + dc * dc) as f64;
                            (dr, dc, kernel_value(d2, Anxiety(a), sigma))
                        })
                        .collect()
                })
                .collect();
            for (hazard, a) in anxiety_map.hazards() {
                for &(dr, dc, c) in &stencils[a.get() as usize] {
                    if let Some(n) = offset_cell(&spec, hazard, dr, dc) {
                        let v = out.grid.at_mut(n);
                        if c > *v {
                            *v = c;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-cell maximum of the obstacle and hazard layers.
pub fn fuse(obstacles: &ObstacleMap, cost: &GaussianCostMap) -> Result<GaussianCostMap, MapError> {
    if obstacles.spec() != cost.spec() {
        return Err(MapError::SpecMismatch);
    }
    let values = obstacles
        .cells()
        .iter()
        .zip(cost.values())
        .map(|(&o, &c)| (o as f64).max(c))
        .collect();
    GaussianCostMap::from_values(*cost.spec(), values)
}

/// Merge one frame of hazard observations into the persistent anxiety layer.
///
/// Inside `visible` the latest frame wins: visible cells without an
/// observation reset to 0. Duplicate observations of a cell keep the maximum.
/// Cells outside the visible region keep their previous score. Observed cells
/// count as visible even when absent from `visible`.
pub fn apply_hazard_update(
    anxiety_map: &AnxietyScoreMap,
    observed: &[(Cell, Anxiety)],
    visible: &Grid<bool>,
) -> Result<AnxietyScoreMap, MapError> {
    if visible.spec() != anxiety_map.spec() {
        return Err(MapError::SpecMismatch);
    }
    let spec = *anxiety_map.spec();
    let mut out = anxiety_map.clone();
    for (v, seen) in out.grid.as_mut_slice().iter_mut().zip(visible.as_slice()) {
        if *seen {
            *v = Anxiety::NONE;
        }
    }
    let mut frame = Grid::filled(spec, Anxiety::NONE);
    for &(cell, a) in observed {
        if !spec.contains(cell) {
            continue;
        }
        let slot = frame.at_mut(cell);
        *slot = (*slot).max(a);
        out.set(cell, *frame.at(cell));
    }
    Ok(out)
}

/// Integer offsets `(dr, dc)` with `dr² + dc² <= radius²`, row-major.
pub(crate) fn disc_offsets(radius: f64) -> Vec<(isize, isize)> {
    let r = radius.max(0.0);
    let ri = r.floor() as isize;
    let r2 = r * r;
    let mut out = Vec::new();
    for dr in -ri..=ri {
        for dc in -ri..=ri {
            if ((dr * dr + dc * dc) as f64) <= r2 {
                out.push((dr, dc));
            }
        }
    }
    out
}

#[inline]
pub(crate) fn offset_cell(spec: &GridSpec, cell: Cell, dr: isize, dc: isize) -> Option<Cell> {
    let r = cell.row as isize + dr;
    let c = cell.col as isize + dc;
    if r < 0 || c < 0 || r as usize >= spec.rows || c as usize >= spec.cols {
        return None;
    }
    Some(Cell::new(r as usize, c as usize))
}
