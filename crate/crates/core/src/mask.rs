//! Boolean block-grid masks.
//!
//! Grids are indexed row-major: cell `(r, c)` lives at `r * grid_cols + c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoolGrid {
    grid_rows: usize,
    grid_cols: usize,
    cells: Vec<bool>,
}

impl BoolGrid {
    pub fn new(grid_rows: usize, grid_cols: usize, value: bool) -> Self {
        Self { grid_rows, grid_cols, cells: vec![value; grid_rows * grid_cols] }
    }

    pub fn from_cells(grid_rows: usize, grid_cols: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid_rows * grid_cols {
            return Err(Error::InvalidArgument(format!("{} cells for a {grid_rows}x{grid_cols} grid", cells.len())));
        }
        Ok(Self { grid_rows, grid_cols, cells })
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.grid_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.grid_cols + c] = v;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Set positions as `(row, col)` pairs in row-major order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.grid_cols;
        self.cells.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i / cols, i % cols))
    }

    fn same_dims(&self, other: &Self) -> bool {
        self.grid_rows == other.grid_rows && self.grid_cols == other.grid_cols
    }

    /// `self \ other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if !self.same_dims(other) {
            return Err(grid_mismatch(self, other));
        }
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| a && !b).collect();
        Ok(Self { cells, ..self.clone() })
    }
}

fn grid_mismatch(a: &BoolGrid, b: &BoolGrid) -> Error {
    Error::MaskShape {
        expected_rows: a.grid_rows,
        expected_cols: a.grid_cols,
        got_rows: b.grid_rows,
        got_cols: b.grid_cols,
    }
}

/// Block mask with provenance: a block is either kept by the weight-norm
/// criterion or regrown by the gradient-norm criterion, never both.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMask {
    kept: BoolGrid,
    regrown: BoolGrid,
}

impl BlockMask {
    pub fn new(kept: BoolGrid, regrown: BoolGrid) -> Result<Self> {
        if !kept.same_dims(&regrown) {
            return Err(grid_mismatch(&kept, &regrown));
        }
        if kept.cells.iter().zip(&regrown.cells).any(|(&k, &g)| k && g) {
            return Err(Error::Invariant("a block cannot be both kept and regrown".into()));
        }
        Ok(Self { kept, regrown })
    }

    /// Every block kept.
    pub fn full(grid_rows: usize, grid_cols: usize) -> Self {
        Self { kept: BoolGrid::new(grid_rows, grid_cols, true), regrown: BoolGrid::new(grid_rows, grid_cols, false) }
    }

    /// No block active.
    pub fn empty(grid_rows: usize, grid_cols: usize) -> Self {
        Self { kept: BoolGrid::new(grid_rows, grid_cols, false), regrown: BoolGrid::new(grid_rows, grid_cols, false) }
    }

    /// Mask whose kept set is exactly `active`.
    pub fn from_active(
        grid_rows: usize,
        grid_cols: usize,
        active: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut kept = BoolGrid::new(grid_rows, grid_cols, false);
        for (r, c) in active {
            if r >= grid_rows || c >= grid_cols {
                return Err(Error::InvalidArgument(format!("block ({r}, {c}) outside {grid_rows}x{grid_cols} grid")));
            }
            kept.set(r, c, true);
        }
        Ok(Self { kept, regrown: BoolGrid::new(grid_rows, grid_cols, false) })
    }

    pub fn grid_rows(&self) -> usize {
        self.kept.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.kept.grid_cols
    }

    pub fn total(&self) -> usize {
        self.kept.len()
    }

    pub fn kept(&self) -> &BoolGrid {
        &self.kept
    }

    pub fn regrown(&self) -> &BoolGrid {
        &self.regrown
    }

    #[inline]
    pub fn is_active(&self, r: usize, c: usize) -> bool {
        self.kept.get(r, c) || self.regrown.get(r, c)
    }

    #[inline]
    pub fn is_regrown(&self, r: usize, c: usize) -> bool {
        self.regrown.get(r, c)
    }

    pub fn active(&self) -> BoolGrid {
        let cells = self.kept.cells.iter().zip(&self.regrown.cells).map(|(&k, &g)| k || g).collect();
        BoolGrid { cells, ..self.kept.clone() }
    }

    pub fn active_count(&self) -> usize {
        self.kept.count() + self.regrown.count()
    }

    pub fn block_sparsity(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        1.0 - self.active_count() as f64 / self.total() as f64
    }

    /// Same active set with every regrown block relabelled as kept.
    ///
    /// Used between refreshes: re-applying a consolidated mask keeps the
    /// active set without zeroing the regrown blocks a second time.
    pub fn consolidated(&self) -> Self {
        Self { kept: self.active(), regrown: BoolGrid::new(self.grid_rows(), self.grid_cols(), false) }
    }

    pub fn check_dims(&self, grid_rows: usize, grid_cols: usize) -> Result<()> {
        if self.grid_rows() != grid_rows || self.grid_cols() != grid_cols {
            return Err(Error::MaskShape {
                expected_rows: grid_rows,
                expected_cols: grid_cols,
                got_rows: self.grid_rows(),
                got_cols: self.grid_cols(),
            });
        }
        Ok(())
    }
}
