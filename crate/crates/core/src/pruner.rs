//! Blocked prune-and-grow.
//!
//! One mask refresh for a weight `W` with gradient `G` at target sparsity `s`:
//!
//! 1. `kept  = top_k(block_norms(W))`
//! 2. `grown = top_k(block_norms(G)) \ kept`
//! 3. active blocks are `kept ∪ grown`; grown blocks restart from zero
//!
//! where `k = round((1 - s) * total_blocks)` and ties between equal norms go
//! to the smaller `(block_col, block_row)`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bcsc::{grid_dim, BlockSparseMatrix};
use crate::dense::Matrix;
use crate::error::{mismatch, Error, Result};
use crate::mask::{BlockMask, BoolGrid};

/// Cubic gradual-sparsity schedule with a mask refresh interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    pub s_init: f64,
    pub s_max: f64,
    /// Total training iterations `m`.
    pub total_iters: usize,
    /// Decay `d`: `s_max` is reached at iteration `m - d`.
    #[serde(default)]
    pub decay: usize,
    #[serde(default = "default_step_size")]
    pub step_size: usize,
}

fn default_step_size() -> usize {
    1
}

impl SparsitySchedule {
    pub fn new(s_init: f64, s_max: f64, total_iters: usize, decay: usize, step_size: usize) -> Result<Self> {
        let s = Self { s_init, s_max, total_iters, decay, step_size };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSchedule(msg));
        if !(0.0..1.0).contains(&self.s_init) {
            return bad(format!("s_init = {} must lie in [0, 1)", self.s_init));
        }
        // s_max = 0 is the dense regression anchor and is accepted.
        if !(0.0..=1.0).contains(&self.s_max) {
            return bad(format!("s_max = {} must lie in [0, 1]", self.s_max));
        }
        if self.s_init > self.s_max {
            return bad(format!("s_init = {} exceeds s_max = {}", self.s_init, self.s_max));
        }
        if self.decay >= self.total_iters {
            return bad(format!("decay d = {} must be smaller than m = {}", self.decay, self.total_iters));
        }
        if self.step_size == 0 {
            return bad("step_size must be at least 1".into());
        }
        Ok(())
    }

    /// `s(i) = s_max + (s_init - s_max) (1 - i / (m - d))^3`, held at `s_max`
    /// for `i >= m - d`.
    pub fn target_sparsity(&self, iteration: usize) -> Result<f64> {
        if iteration > self.total_iters {
            return Err(Error::IterationOutOfRange { iteration, total: self.total_iters });
        }
        let horizon = self.total_iters - self.decay;
        if iteration >= horizon {
            return Ok(self.s_max);
        }
        let t = 1.0 - iteration as f64 / horizon as f64;
        let c = t * t * t;
        // Same polynomial, arranged so that s(0) == s_init holds exactly.
        Ok(self.s_max * (1.0 - c) + self.s_init * c)
    }

    /// Whether masks are regenerated at iteration `iteration` (zero-based,
    /// after that iteration's optimizer step). Fires when
    /// `iteration % step_size == 0`, except at iteration 0.
    pub fn is_refresh(&self, iteration: usize) -> bool {
        iteration > 0 && iteration.is_multiple_of(self.step_size)
    }
}

pub fn target_sparsity(iteration: usize, sched: &SparsitySchedule) -> Result<f64> {
    sched.target_sparsity(iteration)
}

/// Per-block Frobenius norms, row-major over the block grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NormGrid {
    grid_rows: usize,
    grid_cols: usize,
    values: Vec<f64>,
}

impl NormGrid {
    pub fn from_values(grid_rows: usize, grid_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid_rows * grid_cols {
            return Err(Error::InvalidArgument(format!("{} norms for a {grid_rows}x{grid_cols} grid", values.len())));
        }
        Ok(Self { grid_rows, grid_cols, values })
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.grid_cols + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * alpha).collect(), ..*self }
    }
}

/// `sqrt(sum w^2)` of every `b x b` block; absent padding counts as zero.
/// Squares are accumulated in `f64`, row by row within the block.
pub fn block_norms(w: &Matrix, block: usize) -> Result<NormGrid> {
    if block == 0 {
        return Err(Error::ZeroBlockSize);
    }
    let grid_rows = grid_dim(w.rows(), block);
    let grid_cols = grid_dim(w.cols(), block);
    let mut sums = vec![0.0f64; grid_rows * grid_cols];
    for r in 0..w.rows() {
        let row = w.row(r);
        let br = r / block;
        for (bc, chunk) in row.chunks(block).enumerate() {
            let s: f64 = chunk.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
            sums[br * grid_cols + bc] += s;
        }
    }
    Ok(NormGrid { grid_rows, grid_cols, values: sums.into_iter().map(f64::sqrt).collect() })
}

/// Number of blocks surviving at sparsity `s`: `round((1 - s) * total)`.
pub fn kept_block_count(total: usize, s: f64) -> usize {
    (((1.0 - s) * total as f64).round().max(0.0) as usize).min(total)
}

/// Keep the `round((1 - s) * total)` largest-norm blocks.
pub fn prune_s(norms: &NormGrid, s: f64) -> Result<BoolGrid> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("sparsity {s} outside [0, 1]")));
    }
    let total = norms.values.len();
    let k = kept_block_count(total, s);
    let gc = norms.grid_cols;
    let mut order: Vec<usize> = (0..total).collect();
    // Descending norm, then ascending (block_col, block_row).
    order.sort_unstable_by(|&a, &b| {
        norms.values[b].total_cmp(&norms.values[a]).then_with(|| (a % gc, a / gc).cmp(&(b % gc, b / gc)))
    });
    let mut cells = vec![false; total];
    for &i in &order[..k] {
        cells[i] = true;
    }
    BoolGrid::from_cells(norms.grid_rows, norms.grid_cols, cells)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    #[serde(rename = "iter")]
    pub iteration: usize,
    pub s_target: f64,
    pub kept: usize,
    pub regrown: usize,
    pub regrown_ratio: f64,
    pub s_achieved: f64,
}

impl PruneReport {
    pub fn at_iteration(mut self, iteration: usize) -> Self {
        self.iteration = iteration;
        self
    }
}

/// Weight-norm pruning plus gradient-norm regrowth at sparsity `s`.
///
/// The regrown set is not compensated for, so the achieved sparsity can fall
/// below `s`.
pub fn generate_masks(w: &Matrix, g: &Matrix, block: usize, s: f64) -> Result<(BlockMask, PruneReport)> {
    if w.shape() != g.shape() {
        return Err(mismatch("generate_masks", format!("W is {:?}, G is {:?}", w.shape(), g.shape())));
    }
    let kept = prune_s(&block_norms(w, block)?, s)?;
    let by_grad = prune_s(&block_norms(g, block)?, s)?;
    let grown = by_grad.difference(&kept)?;
    let mask = BlockMask::new(kept, grown)?;
    let total = mask.total();
    let regrown = mask.regrown().count();
    let report = PruneReport {
        iteration: 0,
        s_target: s,
        kept: mask.kept().count(),
        regrown,
        regrown_ratio: if total == 0 { 0.0 } else { regrown as f64 / total as f64 },
        s_achieved: mask.block_sparsity(),
    };
    Ok((mask, report))
}

/// Zero every inactive and every regrown block of `w`, and pack the active
/// blocks. Regrown blocks are stored explicitly (as zeros) so later updates
/// reach them.
pub fn apply_mask(w: &Matrix, block: usize, mask: &BlockMask) -> Result<(Matrix, BlockSparseMatrix)> {
    if block == 0 {
        return Err(Error::ZeroBlockSize);
    }
    let gc = grid_dim(w.cols(), block);
    mask.check_dims(grid_dim(w.rows(), block), gc)?;
    let mut masked = w.clone();
    let cols = w.cols();
    let data = masked.as_mut_slice();
    for r in 0..w.rows() {
        let br = r / block;
        for bc in 0..gc {
            if mask.kept().get(br, bc) {
                continue;
            }
            let c0 = bc * block;
            let c1 = (c0 + block).min(cols);
            data[r * cols + c0..r * cols + c1].fill(0.0);
        }
    }
    let packed = BlockSparseMatrix::from_dense(&masked, block, Some(mask))?;
    Ok((masked, packed))
}

/// Mask refreshes of `sched` on a fixed random `rows x cols` weight without
/// training. At each refresh the gradient is `rho * W + (1 - rho) * N`, with
/// fresh standard normal noise `N`, and the resulting mask is applied to `W`.
/// `rho = 1` means `G = W`, which never regrows anything.
pub fn simulate_regrowth(
    sched: &SparsitySchedule,
    rows: usize,
    cols: usize,
    block: usize,
    rho: f64,
    seed: u64,
) -> Result<Vec<PruneReport>> {
    sched.validate()?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("gradient correlation {rho} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Matrix::random_normal(rows, cols, 1.0, &mut rng);
    let (a, c) = (rho as f32, (1.0 - rho) as f32);
    let mut out = Vec::new();
    for i in (0..sched.total_iters).filter(|&i| sched.is_refresh(i)) {
        let noise = Matrix::random_normal(rows, cols, 1.0, &mut rng);
        let g = w.zip_map(&noise, |wv, nv| a * wv + c * nv)?;
        let (mask, report) = generate_masks(&w, &g, block, sched.target_sparsity(i)?)?;
        w = apply_mask(&w, block, &mask)?.0;
        out.push(report.at_iteration(i));
    }
    Ok(out)
}

pub fn write_reports_csv<W: Write>(reports: &[PruneReport], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in reports {
        wtr.serialize(r).map_err(csv_err)?;
    }
    if reports.is_empty() {
        wtr.write_record(["iter", "s_target", "kept", "regrown", "regrown_ratio", "s_achieved"]).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(s_init: f64, s_max: f64, m: usize, d: usize) -> SparsitySchedule {
        SparsitySchedule::new(s_init, s_max, m, d, 1).unwrap()
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = sched(0.1, 0.9, 1000, 200);
        assert_eq!(s.target_sparsity(0).unwrap(), 0.1);
        assert_eq!(s.target_sparsity(800).unwrap(), 0.9);
        assert_eq!(s.target_sparsity(1000).unwrap(), 0.9);
        let s = sched(0.0, 0.8, 10_000, 0);
        assert!((s.target_sparsity(5000).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(s.target_sparsity(10_001), Err(Error::IterationOutOfRange { .. })));
    }

    #[test]
    fn schedule_validation() {
        assert!(SparsitySchedule::new(0.5, 0.4, 10, 0, 1).is_err());
        assert!(SparsitySchedule::new(0.0, 0.8, 10, 10, 1).is_err());
        assert!(SparsitySchedule::new(0.0, 0.8, 10, 0, 0).is_err());
        assert!(SparsitySchedule::new(1.0, 1.0, 10, 0, 1).is_err());
        assert!(SparsitySchedule::new(0.0, 0.0, 10, 0, 1).is_ok());
    }

    #[test]
    fn refresh_cadence() {
        let s = SparsitySchedule::new(0.0, 0.5, 10, 0, 3).unwrap();
        let hits: Vec<usize> = (0..10).filter(|&i| s.is_refresh(i)).collect();
        assert_eq!(hits, vec![3, 6, 9]);
        let never = SparsitySchedule::new(0.0, 0.5, 10, 0, 11).unwrap();
        assert!((0..10).all(|i| !never.is_refresh(i)));
    }

    #[test]
    fn norms() {
        assert!(block_norms(&Matrix::zeros(4, 4), 2).unwrap().values().iter().all(|&v| v == 0.0));
        let ones = Matrix::from_fn(2, 2, |_, _| 1.0);
        assert_eq!(block_norms(&ones, 2).unwrap().values(), &[2.0]);
        let scaled = Matrix::from_fn(4, 4, |r, c| (1 + (r / 2) * 2 + c / 2) as f32);
        let n = block_norms(&scaled, 2).unwrap();
        assert_eq!(n.values(), &[2.0, 4.0, 6.0, 8.0]);
        // Padding: a 3x3 all-ones matrix with b = 2.
        let n = block_norms(&Matrix::from_fn(3, 3, |_, _| 1.0), 2).unwrap();
        assert_eq!(n.values(), &[2.0, 2f64.sqrt(), 2f64.sqrt(), 1.0]);
    }

    #[test]
    fn prune_top_k_and_ties() {
        let n = NormGrid::from_values(2, 2, vec![4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(prune_s(&n, 0.5).unwrap().cells(), &[true, true, false, false]);
        assert_eq!(prune_s(&n, 0.0).unwrap().count(), 4);
        assert_eq!(prune_s(&n, 1.0).unwrap().count(), 0);
        // All equal: ties go to column 0 first, then lower rows.
        let eq = NormGrid::from_values(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(prune_s(&eq, 0.5).unwrap().cells(), &[true, false, true, false]);
        assert!(prune_s(&n, 1.5).is_err());
    }

    #[test]
    fn masks_from_weights_and_gradients() {
        // Weight norms favour the diagonal, gradient norms the first row.
        let w = Matrix::from_fn(4, 4, |r, c| if r / 2 == c / 2 { 1.0 } else { 0.1 });
        let g = Matrix::from_fn(4, 4, |r, c| match (r / 2, c / 2) {
            (0, 0) => 5.0,
            (0, 1) => 4.0,
            _ => 0.0,
        });
        let (mask, rep) = generate_masks(&w, &g, 2, 0.5).unwrap();
        assert!(mask.kept().get(0, 0) && mask.kept().get(1, 1));
        assert_eq!(mask.regrown().positions().collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(mask.active_count(), 3);
        assert_eq!((rep.kept, rep.regrown), (2, 1));
        assert_eq!(rep.regrown_ratio, 0.25);
        assert_eq!(rep.s_achieved, 0.25);

        let (masked, packed) = apply_mask(&w, 2, &mask).unwrap();
        assert_eq!(packed.nnzb(), 3);
        assert!(packed.get_block(0, 1).unwrap().iter().all(|&v| v == 0.0));
        assert!(packed.get_block(1, 0).is_none());
        assert_eq!(masked.get(0, 2), 0.0);
        assert_eq!(masked.get(0, 0), 1.0);
    }

    #[test]
    fn identical_gradient_grows_nothing() {
        let w = Matrix::from_fn(6, 6, |r, c| ((r * 7 + c * 3) % 5) as f32 - 2.0);
        let (mask, rep) = generate_masks(&w, &w, 2, 0.6).unwrap();
        assert_eq!(rep.regrown, 0);
        assert_eq!(mask.regrown().count(), 0);
        let (mask0, _) = generate_masks(&w, &w.map(|v| -v * 3.0 + 1.0), 2, 0.0).unwrap();
        assert_eq!(mask0.kept().count(), 9);
        assert_eq!(mask0.regrown().count(), 0);
    }

    #[test]
    fn apply_mask_extremes_and_errors() {
        let w = Matrix::from_fn(4, 4, |r, c| (r * 4 + c) as f32 + 1.0);
        let (m, p) = apply_mask(&w, 2, &BlockMask::full(2, 2)).unwrap();
        assert!(m.bit_eq(&w));
        assert_eq!(p.nnzb(), 4);
        let (m, p) = apply_mask(&w, 2, &BlockMask::empty(2, 2)).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(p.nnzb(), 0);
        assert!(apply_mask(&w, 2, &BlockMask::full(3, 2)).is_err());
        assert!(generate_masks(&w, &Matrix::zeros(4, 5), 2, 0.5).is_err());
    }

    #[test]
    fn report_csv_header() {
        let mut out = Vec::new();
        write_reports_csv(&[], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().trim(), "iter,s_target,kept,regrown,regrown_ratio,s_achieved");
        let (_, rep) = generate_masks(&Matrix::identity(4), &Matrix::identity(4), 2, 0.5).unwrap();
        let mut out = Vec::new();
        write_reports_csv(&[rep.at_iteration(7)], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,s_target,kept,regrown,regrown_ratio,s_achieved");
        assert_eq!(lines.next().unwrap(), "7,0.5,2,0,0.0,0.5");
    }

    #[test]
    fn simulation_with_gradient_equal_to_weights_never_regrows() {
        let sched = SparsitySchedule::new(0.0, 0.9, 200, 20, 10).unwrap();
        let same = simulate_regrowth(&sched, 64, 48, 8, 1.0, 3).unwrap();
        assert_eq!(same.len(), 19);
        assert!(same.iter().all(|r| r.regrown == 0 && r.regrown_ratio == 0.0));
        let noisy = simulate_regrowth(&sched, 64, 48, 8, 0.0, 3).unwrap();
        assert!(noisy.iter().any(|r| r.regrown > 0));
        assert!(noisy.iter().all(|r| (0.0..=1.0).contains(&r.regrown_ratio)));
    }
}
