//! Kernel timing sweeps: block-sparse product versus the full-grid baseline.
//!
//! Each combination gets one warmup run and then `trials` timed runs of
//! each kernel; the median is reported. Active blocks are placed uniformly at
//! random, exactly `round((1 - s) * total)` of them.
//!
//! `bytes_moved` is a traffic estimate for the sparse kernel: each stored
//! block is read once together with the `M x b` panel of `X` it multiplies,
//! plus the index arrays and one write of `Y`.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bcsc::{grid_dim, BlockSparseMatrix};
use crate::bspmm::{bspmm_with, flops, KernelOptions, Nonlinearity};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::pruner::{csv_err, kept_block_count};

pub const DEFAULT_MAX_BYTES: u64 = 4 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl BenchShape {
    pub fn square(n: usize) -> Self {
        Self { m: n, n, k: n }
    }
}

impl FromStr for BenchShape {
    type Err = Error;

    /// `"2048"` (square) or `"MxNxK"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let num = |p: &str| p.trim().parse::<usize>().map_err(|_| Error::InvalidArgument(format!("bad size {s:?}")));
        match parts.as_slice() {
            [n] => Ok(Self::square(num(n)?)),
            [m, n, k] => Ok(Self { m: num(m)?, n: num(n)?, k: num(k)? }),
            _ => Err(Error::InvalidArgument(format!("size {s:?} must be N or MxNxK"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchConfig {
    pub shapes: Vec<BenchShape>,
    pub block_sizes: Vec<usize>,
    pub sparsities: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub row_tile: usize,
    pub max_bytes: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            shapes: vec![BenchShape::square(1024)],
            block_sizes: vec![32, 64],
            sparsities: vec![0.0, 0.5, 0.9, 0.95],
            trials: 5,
            seed: 0,
            row_tile: crate::bspmm::DEFAULT_ROW_TILE,
            max_bytes: DEFAULT_MAX_BYTES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub b: usize,
    pub sparsity: f64,
    pub nnzb: usize,
    pub trials: usize,
    pub sparse_ns: u64,
    pub dense_ns: u64,
    pub speedup: f64,
    pub dense_flops: u64,
    pub sparse_flops: u64,
    pub bytes_moved: u64,
}

/// Random `rows x cols` block-sparse matrix with exactly
/// `round((1 - s) * total)` uniformly placed active blocks and `N(0, 1)` values.
pub fn random_block_sparse<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    block: usize,
    sparsity: f64,
    rng: &mut R,
) -> Result<BlockSparseMatrix> {
    if block == 0 {
        return Err(Error::ZeroBlockSize);
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!("sparsity {sparsity} outside [0, 1]")));
    }
    let gr = grid_dim(rows, block);
    let gc = grid_dim(cols, block);
    let total = gr * gc;
    let active = kept_block_count(total, sparsity);
    // Column-major cell ids so sorting gives storage order.
    let mut cells = sample(rng, total, active).into_vec();
    cells.sort_unstable();
    let bb = block * block;
    let mut col_ptr = vec![0usize; gc + 1];
    let mut block_row_idx = Vec::with_capacity(active);
    let mut values = Vec::with_capacity(active * bb);
    for &cell in &cells {
        let (c, r) = (cell / gr, cell % gr);
        col_ptr[c + 1] += 1;
        block_row_idx.push(r as u32);
        let rh = block.min(rows - r * block);
        let cw = block.min(cols - c * block);
        for i in 0..block {
            for j in 0..block {
                values.push(if i < rh && j < cw { rng.sample::<f32, _>(StandardNormal) } else { 0.0 });
            }
        }
    }
    for c in 0..gc {
        col_ptr[c + 1] += col_ptr[c];
    }
    BlockSparseMatrix::from_parts(rows, cols, block, col_ptr, block_row_idx, values)
}

/// Median of a nonempty slice of durations in nanoseconds.
pub fn median_ns(samples: &mut [u64]) -> u64 {
    samples.sort_unstable();
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    }
}

fn time_runs(trials: usize, mut f: impl FnMut() -> Result<Matrix>) -> Result<u64> {
    std::hint::black_box(f()?);
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t0 = Instant::now();
        let y = f()?;
        samples.push(t0.elapsed().as_nanos() as u64);
        std::hint::black_box(y);
    }
    Ok(median_ns(&mut samples))
}

pub fn estimated_bytes_moved(m: usize, n: usize, w: &BlockSparseMatrix) -> u64 {
    let b = w.block() as u64;
    let nnzb = w.nnzb() as u64;
    let (m, n) = (m as u64, n as u64);
    4 * nnzb * b * b + 4 * nnzb + 8 * (w.grid_cols() as u64 + 1) + 4 * nnzb * m * b + 4 * m * n
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() || self.block_sizes.is_empty() || self.sparsities.is_empty() {
            return Err(Error::InvalidArgument("every sweep must be nonempty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.block_sizes.contains(&0) {
            return Err(Error::ZeroBlockSize);
        }
        for s in &self.sparsities {
            if !(0.0..=1.0).contains(s) {
                return Err(Error::InvalidArgument(format!("sparsity {s} outside [0, 1]")));
            }
        }
        for sh in &self.shapes {
            let bytes = 4 * (sh.m * sh.k + 2 * sh.k * sh.n + sh.m * sh.n) as u64;
            if bytes > self.max_bytes {
                return Err(Error::InvalidArgument(format!(
                    "shape {}x{}x{} needs about {} MiB, above the {} MiB limit",
                    sh.m,
                    sh.n,
                    sh.k,
                    bytes >> 20,
                    self.max_bytes >> 20
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shapes.len() * self.block_sizes.len() * self.sparsities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Run the full sweep: shapes x block sizes x sparsities.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let opts = KernelOptions { row_tile: cfg.row_tile };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.len());
    for sh in &cfg.shapes {
        let x = Matrix::random_normal(sh.m, sh.k, 1.0, &mut rng);
        for &b in &cfg.block_sizes {
            let full = random_block_sparse(sh.k, sh.n, b, 0.0, &mut rng)?;
            let dense_ns = time_runs(cfg.trials, || bspmm_with(&x, &full, Nonlinearity::None, opts))?;
            for &s in &cfg.sparsities {
                let w = random_block_sparse(sh.k, sh.n, b, s, &mut rng)?;
                let sparse_ns = time_runs(cfg.trials, || bspmm_with(&x, &w, Nonlinearity::None, opts))?;
                let fl = flops(sh.m as u64, sh.n as u64, sh.k as u64, w.nnzb() as u64, b as u64);
                out.push(BenchRecord {
                    m: sh.m,
                    n: sh.n,
                    k: sh.k,
                    b,
                    sparsity: s,
                    nnzb: w.nnzb(),
                    trials: cfg.trials,
                    sparse_ns,
                    dense_ns,
                    speedup: dense_ns as f64 / sparse_ns.max(1) as f64,
                    dense_flops: fl.dense,
                    sparse_flops: fl.sparse,
                    bytes_moved: estimated_bytes_moved(sh.m, sh.n, &w),
                });
            }
        }
    }
    Ok(out)
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in records {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Run `f` on a dedicated pool of `threads` workers (`0` = rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
