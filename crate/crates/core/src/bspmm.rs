//! Dense-times-block-sparse products `Y = f(X * W)`.
//!
//! The output is partitioned into row tiles of `row_tile` rows (the dense-side
//! tile) and block columns of `W`. A row tile is owned by exactly one worker,
//! which walks the block columns in order; inside a block column the stored
//! blocks are accumulated in ascending `block_row_idx`. Each block's
//! contribution is first summed over its `b` inner indices into a zeroed
//! partial and then added to the running accumulator. That order is fixed, so
//! results are bitwise reproducible for any thread count.
//!
//! The nonlinearity is applied when the accumulator tile is written back,
//! so no pre-activation output is materialized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bcsc::BlockSparseMatrix;
use crate::dense::Matrix;
use crate::error::{mismatch, Error, Result};
use crate::mask::BlockMask;

pub const DEFAULT_ROW_TILE: usize = 64;

const GELU_SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_CUBIC: f32 = 0.044_715;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u32)]
pub enum Nonlinearity {
    #[default]
    None = 0,
    Relu = 1,
    Gelu = 2,
    Silu = 3,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Nonlinearity::None => x,
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Gelu => gelu(x),
            Nonlinearity::Silu => silu(x),
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "identity" => Ok(Self::None),
            "relu" => Ok(Self::Relu),
            "gelu" => Ok(Self::Gelu),
            "silu" | "swish" => Ok(Self::Silu),
            other => Err(Error::InvalidArgument(format!("unknown nonlinearity {other:?}"))),
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f32) -> f32 {
    x * sigmoid(x)
}

/// `d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))`.
#[inline]
pub fn silu_grad(x: f32) -> f32 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelOptions {
    /// Rows of `X` processed together against each block column.
    pub row_tile: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { row_tile: DEFAULT_ROW_TILE }
    }
}

pub fn bspmm(x: &Matrix, w: &BlockSparseMatrix) -> Result<Matrix> {
    bspmm_with(x, w, Nonlinearity::None, KernelOptions::default())
}

pub fn bspmm_fused(x: &Matrix, w: &BlockSparseMatrix, f: Nonlinearity) -> Result<Matrix> {
    bspmm_with(x, w, f, KernelOptions::default())
}

pub fn bspmm_with(x: &Matrix, w: &BlockSparseMatrix, f: Nonlinearity, opts: KernelOptions) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(mismatch("bspmm", format!("X is {:?} but W is {}x{}", x.shape(), w.rows(), w.cols())));
    }
    if opts.row_tile == 0 {
        return Err(Error::InvalidArgument("row_tile must be at least 1".into()));
    }
    let mut y = Matrix::zeros(x.rows(), w.cols());
    if x.rows() == 0 || w.cols() == 0 {
        return Ok(y);
    }
    run_kernel(x, w, f, opts.row_tile, y.as_mut_slice());
    Ok(y)
}

fn run_kernel(x: &Matrix, w: &BlockSparseMatrix, f: Nonlinearity, row_tile: usize, y: &mut [f32]) {
    let n = w.cols();
    let k = x.cols();
    let b = w.block();
    let xs = x.as_slice();
    let col_ptr = w.col_ptr();
    let row_idx = w.block_row_idx();

    y.par_chunks_mut(row_tile * n).enumerate().for_each(|(tile, y_tile)| {
        let r0 = tile * row_tile;
        let rows = y_tile.len() / n;
        let mut acc = vec![0.0f32; rows * b];
        for c in 0..w.grid_cols() {
            let c0 = c * b;
            let cw = b.min(n - c0);
            let range = col_ptr[c]..col_ptr[c + 1];
            if range.is_empty() {
                let v = f.apply(0.0);
                for i in 0..rows {
                    y_tile[i * n + c0..i * n + c0 + cw].fill(v);
                }
                continue;
            }
            acc.fill(0.0);
            for idx in range {
                let kk0 = row_idx[idx] as usize * b;
                let klen = b.min(k - kk0);
                let panel = XPanel { x: xs, stride: k, row0: r0, col0: kk0, klen };
                accumulate_block(&panel, rows, w.block_values(idx), b, &mut acc);
            }
            for i in 0..rows {
                let dst = &mut y_tile[i * n + c0..i * n + c0 + cw];
                let src = &acc[i * b..i * b + cw];
                if f == Nonlinearity::None {
                    dst.copy_from_slice(src);
                } else {
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = f.apply(s);
                    }
                }
            }
        }
    });
}

/// A `rows x klen` window of `X` starting at `(row0, col0)`.
struct XPanel<'a> {
    x: &'a [f32],
    stride: usize,
    row0: usize,
    col0: usize,
    klen: usize,
}

impl XPanel<'_> {
    #[inline]
    fn row(&self, i: usize) -> &[f32] {
        let start = (self.row0 + i) * self.stride + self.col0;
        &self.x[start..start + self.klen]
    }
}

#[inline]
fn accumulate_block(panel: &XPanel<'_>, rows: usize, wblk: &[f32], b: usize, acc: &mut [f32]) {
    if b.is_multiple_of(32) {
        accumulate_strips::<32>(panel, rows, wblk, b, acc);
    } else if b.is_multiple_of(16) {
        accumulate_strips::<16>(panel, rows, wblk, b, acc);
    } else if b.is_multiple_of(8) {
        accumulate_strips::<8>(panel, rows, wblk, b, acc);
    } else {
        accumulate_scalar(panel, rows, wblk, b, acc);
    }
}

/// Register-tiled `4 x NR` micro-kernel. Per output element the arithmetic is
/// `acc += sum_kk x[kk] * w[kk]`, summed from zero in ascending `kk`, which is
/// exactly what [`accumulate_scalar`] computes.
#[inline]
fn accumulate_strips<const NR: usize>(panel: &XPanel<'_>, rows: usize, wblk: &[f32], b: usize, acc: &mut [f32]) {
    let klen = panel.klen;
    let mut i = 0;
    while i + 4 <= rows {
        let xr: [&[f32]; 4] = std::array::from_fn(|ii| panel.row(i + ii));
        for j0 in (0..b).step_by(NR) {
            let mut p = [[0.0f32; NR]; 4];
            for kk in 0..klen {
                let wrow: &[f32; NR] = wblk[kk * b + j0..kk * b + j0 + NR].try_into().unwrap();
                for ii in 0..4 {
                    let xv = xr[ii][kk];
                    for jj in 0..NR {
                        p[ii][jj] += xv * wrow[jj];
                    }
                }
            }
            for (ii, pr) in p.iter().enumerate() {
                let a = &mut acc[(i + ii) * b + j0..(i + ii) * b + j0 + NR];
                for jj in 0..NR {
                    a[jj] += pr[jj];
                }
            }
        }
        i += 4;
    }
    while i < rows {
        let xr = panel.row(i);
        for j0 in (0..b).step_by(NR) {
            let mut p = [0.0f32; NR];
            for (kk, &xv) in xr.iter().enumerate() {
                let wrow: &[f32; NR] = wblk[kk * b + j0..kk * b + j0 + NR].try_into().unwrap();
                for jj in 0..NR {
                    p[jj] += xv * wrow[jj];
                }
            }
            let a = &mut acc[i * b + j0..i * b + j0 + NR];
            for jj in 0..NR {
                a[jj] += p[jj];
            }
        }
        i += 1;
    }
}

fn accumulate_scalar(panel: &XPanel<'_>, rows: usize, wblk: &[f32], b: usize, acc: &mut [f32]) {
    for i in 0..rows {
        let xr = panel.row(i);
        for j in 0..b {
            let mut p = 0.0f32;
            for (kk, &xv) in xr.iter().enumerate() {
                p += xv * wblk[kk * b + j];
            }
            acc[i * b + j] += p;
        }
    }
}

/// Dense reference product using the same tiling over a full block grid.
///
/// This is the baseline that kernel speedups are measured against: it runs
/// the identical code path with every block present.
#[derive(Clone, Debug)]
pub struct DenseBaseline {
    packed: BlockSparseMatrix,
}

impl DenseBaseline {
    pub fn new(w: &Matrix, block: usize) -> Result<Self> {
        let grid = BlockMask::full(w.rows().div_ceil(block.max(1)), w.cols().div_ceil(block.max(1)));
        Ok(Self { packed: BlockSparseMatrix::from_dense(w, block, Some(&grid))? })
    }

    pub fn matmul(&self, x: &Matrix, opts: KernelOptions) -> Result<Matrix> {
        bspmm_with(x, &self.packed, Nonlinearity::None, opts)
    }

    pub fn packed(&self) -> &BlockSparseMatrix {
        &self.packed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub dense: u64,
    pub sparse: u64,
}

/// Multiply-add count for an `M x K` by `K x N` product, two flops per
/// multiply-add. Sparse counts only stored blocks: `2 * M * nnzb * b^2`.
pub fn flops(m: u64, n: u64, k: u64, nnzb: u64, b: u64) -> FlopCount {
    FlopCount { dense: 2 * m * n * k, sparse: 2 * m * nnzb * b * b }
}

pub fn flops_for(m: usize, w: &BlockSparseMatrix) -> FlopCount {
    flops(m as u64, w.cols() as u64, w.rows() as u64, w.nnzb() as u64, w.block() as u64)
}
