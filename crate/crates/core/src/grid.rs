//! Top-down grid geometry shared by every map layer.
//!
//! Cells are addressed as `(row, col)`. Columns grow along world +x and rows
//! along world +y; `origin` is the world position of the center of cell
//! `(0, 0)`.

use serde::{Deserialize, Serialize};

use crate::error::MapError;

/// A cell index on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Euclidean distance between cell centers, in cells.
    pub fn distance(self, other: Cell) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        (dr * dr + dc * dc).sqrt()
    }

    /// True when `other` is one of the eight neighbours of `self`.
    pub fn is_adjacent8(self, other: Cell) -> bool {
        let dr = self.row.abs_diff(other.row);
        let dc = self.col.abs_diff(other.col);
        dr <= 1 && dc <= 1 && (dr + dc) > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Meters per cell.
    pub resolution: f64,
    /// World coordinates (meters) of the center of cell (0, 0).
    pub origin: [f64; 2],
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, resolution: f64, origin: [f64; 2]) -> Result<Self, MapError> {
        let spec = Self {
            rows,
            cols,
            resolution,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(MapError::InvalidSpec(format!(
                "grid must be non-empty, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(MapError::InvalidSpec(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(MapError::InvalidSpec("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        debug_assert!(self.contains(cell));
        cell.row * self.cols + cell.col
    }

    #[inline]
    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    /// World coordinates of a cell center.
    pub fn world_of(&self, cell: Cell) -> [f64; 2] {
        [
            self.origin[0] + cell.col as f64 * self.resolution,
            self.origin[1] + cell.row as f64 * self.resolution,
        ]
    }

    /// Cell containing a world point, or `None` outside the map.
    pub fn grid_of(&self, world: [f64; 2]) -> Option<Cell> {
        let col = (world[0] - self.origin[0]) / self.resolution;
        let row = (world[1] - self.origin[1]) / self.resolution;
        if !(col.is_finite() && row.is_finite()) || col < -0.5 || row < -0.5 {
            return None;
        }
        // round half away from zero; the truncating cast is much cheaper than f64::round
        let cell = Cell::new((row + 0.5) as usize, (col + 0.5) as usize);
        self.contains(cell).then_some(cell)
    }

    /// Fractional grid coordinates `(row, col)` of a world point; unbounded.
    pub fn grid_coords(&self, world: [f64; 2]) -> [f64; 2] {
        [
            (world[1] - self.origin[1]) / self.resolution,
            (world[0] - self.origin[0]) / self.resolution,
        ]
    }

    /// Iterate 8-neighbours of `cell` that lie inside the grid, in row-major order.
    pub fn neighbors8(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        const OFFSETS: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        OFFSETS.iter().filter_map(move |&(dr, dc)| {
            let r = cell.row as isize + dr;
            let c = cell.col as isize + dc;
            if r < 0 || c < 0 {
                return None;
            }
            let n = Cell::new(r as usize, c as usize);
            self.contains(n).then_some(n)
        })
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| Cell::new(r, c)))
    }
}

/// Row-major dense storage over a [`GridSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    spec: GridSpec,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(spec: GridSpec, value: T) -> Self {
        Self {
            spec,
            data: vec![value; spec.len()],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(spec: GridSpec, data: Vec<T>) -> Result<Self, MapError> {
        if data.len() != spec.len() {
            return Err(MapError::Dimension {
                expected: (spec.rows, spec.cols),
                found: (data.len(), 1),
            });
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn get(&self, cell: Cell) -> Option<&T> {
        self.spec.contains(cell).then(|| &self.data[self.spec.index(cell)])
    }

    /// Panics when `cell` is out of bounds.
    pub fn at(&self, cell: Cell) -> &T {
        assert!(self.spec.contains(cell), "cell {cell:?} out of bounds");
        &self.data[self.spec.index(cell)]
    }

    pub fn at_mut(&mut self, cell: Cell) -> &mut T {
        assert!(self.spec.contains(cell), "cell {cell:?} out of bounds");
        let i = self.spec.index(cell);
        &mut self.data[i]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = (Cell, &T)> + '_ {
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.spec.cell_at(i), v))
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            spec: self.spec,
            data: self.data.iter().map(f).collect(),
        }
    }
}
