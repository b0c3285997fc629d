//! Independent reference implementations used by the integration tests.
//! Everything here is written from the definitions, in f64, without
//! calling the library's kernels.

#![allow(dead_code)]

use blocksparse::{BlockMask, BoolGrid, Matrix};
use rand::seq::index::sample;
use rand::Rng;

/// Row-major f64 matrix.
#[derive(Clone, Debug)]
pub struct M64 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl M64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_f32(m: &Matrix) -> Self {
        Self { rows: m.rows(), cols: m.cols(), data: m.as_slice().iter().map(|&v| f64::from(v)).collect() }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn hadamard(&self, o: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&o.data).map(|(a, b)| a * b).collect() }
    }
}

/// Triple loop.
pub fn matmul(a: &M64, b: &M64) -> M64 {
    assert_eq!(a.cols, b.rows);
    let mut out = M64::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut s = 0.0;
            for k in 0..a.cols {
                s += a.at(i, k) * b.at(k, j);
            }
            *out.at_mut(i, j) = s;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `(silu(X W1) * (X W2)) W3` and the intermediate `G`.
pub fn mlp(x: &M64, w1: &M64, w2: &M64, w3: &M64) -> (M64, M64) {
    let a = matmul(x, w1);
    let b = matmul(x, w2);
    let g = a.map(silu).hadamard(&b);
    (matmul(&g, w3), g)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Magnitude of the terms behind each output of the gated MLP, propagated to
/// first order through both layers:
/// `(|silu(A)| (|B| + |X| |W2|) + |silu'(A)| |B| (|X| |W1|)) |W3|`
/// with `A = X W1`, `B = X W2`.
pub fn mlp_scale(x: &M64, w1: &M64, w2: &M64, w3: &M64) -> M64 {
    let a = matmul(x, w1);
    let b = matmul(x, w2);
    let (sa, sb) = (matmul(&x.abs(), &w1.abs()), matmul(&x.abs(), &w2.abs()));
    let mut dg = M64::zeros(a.rows, a.cols);
    for i in 0..dg.data.len() {
        let (av, bv) = (a.data[i], b.data[i].abs());
        dg.data[i] = silu(av).abs() * (bv + sb.data[i]) + silu_grad(av).abs() * bv * sa.data[i];
    }
    matmul(&dg, &w3.abs())
}

/// `|got - want| / max(|want|, scale)`, where `scale` is the sum of the
/// absolute values of the terms that produced `want`. This is the usual
/// error measure for a floating-point dot product: it is a relative error,
/// and it stays meaningful when the terms cancel.
pub fn scaled_rel_err(got: f64, want: f64, scale: f64) -> f64 {
    let denom = want.abs().max(scale);
    if denom == 0.0 {
        (got - want).abs()
    } else {
        (got - want).abs() / denom
    }
}

/// Max over entries of [`scaled_rel_err`].
pub fn max_scaled_err(got: &Matrix, want: &M64, scale: &M64) -> f64 {
    assert_eq!(got.shape(), (want.rows, want.cols));
    got.as_slice()
        .iter()
        .zip(&want.data)
        .zip(&scale.data)
        .map(|((&g, &w), &s)| scaled_rel_err(f64::from(g), w, s))
        .fold(0.0, f64::max)
}

/// Mask with exactly `round((1 - s) * total)` uniformly random active blocks.
pub fn random_mask<R: Rng>(grid_rows: usize, grid_cols: usize, s: f64, rng: &mut R) -> BlockMask {
    let total = grid_rows * grid_cols;
    let k = ((1.0 - s) * total as f64).round() as usize;
    let mut cells = vec![false; total];
    for i in sample(rng, total, k).into_iter() {
        cells[i] = true;
    }
    BlockMask::new(
        BoolGrid::from_cells(grid_rows, grid_cols, cells).unwrap(),
        BoolGrid::new(grid_rows, grid_cols, false),
    )
    .unwrap()
}

pub fn grid(n: usize, b: usize) -> usize {
    n.div_ceil(b)
}

/// Zero every entry outside the active blocks of `mask`.
pub fn masked(w: &Matrix, b: usize, mask: &BlockMask) -> Matrix {
    Matrix::from_fn(w.rows(), w.cols(), |r, c| if mask.is_active(r / b, c / b) { w.get(r, c) } else { 0.0 })
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, scale: f32, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0f32..1.0) * scale)
}

/// Brute-force prune: Frobenius norm of each block (f64, row-major within
/// the block), full sort by (norm desc, block col asc, block row asc), keep
/// the first `round((1 - s) * total)`. Returns row-major flags.
pub fn brute_prune(w: &Matrix, b: usize, s: f64) -> Vec<bool> {
    let (gr, gc) = (grid(w.rows(), b), grid(w.cols(), b));
    let mut cells: Vec<(f64, usize, usize)> = Vec::with_capacity(gr * gc);
    for br in 0..gr {
        for bc in 0..gc {
            let mut sq = 0.0f64;
            for r in br * b..((br + 1) * b).min(w.rows()) {
                for c in bc * b..((bc + 1) * b).min(w.cols()) {
                    let v = f64::from(w.get(r, c));
                    sq += v * v;
                }
            }
            cells.push((sq.sqrt(), bc, br));
        }
    }
    cells.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let k = ((1.0 - s) * (gr * gc) as f64).round() as usize;
    let mut out = vec![false; gr * gc];
    for &(_, bc, br) in cells.iter().take(k) {
        out[br * gc + bc] = true;
    }
    out
}

/// `(kept, grown)` per the set definitions: `kept = S(W)`, `grown = S(G) \ kept`.
pub fn brute_masks(w: &Matrix, g: &Matrix, b: usize, s: f64) -> (Vec<bool>, Vec<bool>) {
    let kept = brute_prune(w, b, s);
    let by_grad = brute_prune(g, b, s);
    let grown = by_grad.iter().zip(&kept).map(|(&g, &k)| g && !k).collect();
    (kept, grown)
}

/// Cubic schedule straight from its definition.
pub fn schedule(i: usize, s_init: f64, s_max: f64, m: usize, d: usize) -> f64 {
    if i >= m - d {
        return s_max;
    }
    let t = 1.0 - i as f64 / (m - d) as f64;
    s_max + (s_init - s_max) * t.powi(3)
}

/// Central differences of `f` at every entry of `x` with step `h`.
pub fn central_diff(x: &M64, h: f64, mut f: impl FnMut(&M64) -> f64) -> M64 {
    let mut out = M64::zeros(x.rows, x.cols);
    let mut probe = x.clone();
    for i in 0..x.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let up = f(&probe);
        probe.data[i] = orig - h;
        let down = f(&probe);
        probe.data[i] = orig;
        out.data[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Max over entries of `|g - fd| / max(|fd|, floor)` with
/// `floor = 1e-2 * max|fd|`, so entries that are numerically zero compared
/// with the gradient's own scale do not dominate.
pub fn grad_rel_err(analytic: &Matrix, fd: &M64) -> f64 {
    let peak = fd.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-2 * peak).max(1e-12);
    analytic
        .as_slice()
        .iter()
        .zip(&fd.data)
        .map(|(&g, &d)| (f64::from(g) - d).abs() / d.abs().max(floor))
        .fold(0.0, f64::max)
}
