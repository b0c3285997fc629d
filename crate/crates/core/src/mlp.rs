//! Gated MLP block `Y = (silu(X W1) * (X W2)) W3` on block-sparse weights.
//!
//! Shapes: `X: M x e`, `W1, W2: e x h`, `W3: h x e`, where `M` is the
//! flattened `batch * seq` dimension.

use rand::Rng;

use crate::bcsc::{grid_dim, BlockSparseMatrix};
use crate::bspmm::{bspmm, silu, silu_grad};
use crate::dense::{matmul_tn, Matrix};
use crate::error::{mismatch, Error, Result};
use crate::mask::BlockMask;
use crate::pruner::apply_mask;

/// Dense master weight plus its current mask and packed copies.
///
/// The packed `W` and `W^T` always equal the masked dense master.
#[derive(Clone, Debug)]
pub struct MaskedWeight {
    dense: Matrix,
    mask: BlockMask,
    block: usize,
    packed: BlockSparseMatrix,
    packed_t: BlockSparseMatrix,
}

impl MaskedWeight {
    /// Unpruned weight: every block active.
    pub fn new(dense: Matrix, block: usize) -> Result<Self> {
        if block == 0 {
            return Err(Error::ZeroBlockSize);
        }
        let mask = BlockMask::full(grid_dim(dense.rows(), block), grid_dim(dense.cols(), block));
        Self::with_mask(dense, block, mask)
    }

    pub fn with_mask(dense: Matrix, block: usize, mask: BlockMask) -> Result<Self> {
        let (masked, packed) = apply_mask(&dense, block, &mask)?;
        let packed_t = packed.transpose();
        Ok(Self { dense: masked, mask: mask.consolidated(), block, packed, packed_t })
    }

    /// Install a freshly generated mask: inactive and regrown blocks are
    /// zeroed, then the packed copies are rebuilt. The stored mask is the
    /// consolidated one, so later [`reapply`](Self::reapply) calls keep the
    /// regrown blocks.
    pub fn set_mask(&mut self, mask: BlockMask) -> Result<()> {
        let (masked, packed) = apply_mask(&self.dense, self.block, &mask)?;
        self.dense = masked;
        self.packed_t = packed.transpose();
        self.packed = packed;
        self.mask = mask.consolidated();
        Ok(())
    }

    /// Re-zero inactive blocks of the dense master and repack.
    pub fn reapply(&mut self) -> Result<()> {
        let mask = self.mask.clone();
        self.set_mask(mask)
    }

    /// Repack without masking. For dense (exempt) weights.
    pub fn repack_dense(&mut self) -> Result<()> {
        let full = BlockMask::full(self.mask.grid_rows(), self.mask.grid_cols());
        self.set_mask(full)
    }

    pub fn dense(&self) -> &Matrix {
        &self.dense
    }

    /// Mutable access to the dense master. Call [`reapply`](Self::reapply)
    /// (or [`repack_dense`](Self::repack_dense)) afterwards to refresh the packed copies.
    pub fn dense_mut(&mut self) -> &mut Matrix {
        &mut self.dense
    }

    pub fn mask(&self) -> &BlockMask {
        &self.mask
    }

    pub fn packed(&self) -> &BlockSparseMatrix {
        &self.packed
    }

    pub fn packed_t(&self) -> &BlockSparseMatrix {
        &self.packed_t
    }

    pub fn block(&self) -> usize {
        self.block
    }
}

#[derive(Clone, Debug)]
pub struct SparseMlp {
    pub w1: MaskedWeight,
    pub w2: MaskedWeight,
    pub w3: MaskedWeight,
}

impl SparseMlp {
    pub fn new(w1: Matrix, w2: Matrix, w3: Matrix, block: usize) -> Result<Self> {
        let (e, h) = w1.shape();
        if w2.shape() != (e, h) || w3.shape() != (h, e) {
            return Err(mismatch(
                "SparseMlp::new",
                format!("W1 {:?}, W2 {:?}, W3 {:?}; expected e x h, e x h, h x e", w1.shape(), w2.shape(), w3.shape()),
            ));
        }
        Ok(Self {
            w1: MaskedWeight::new(w1, block)?,
            w2: MaskedWeight::new(w2, block)?,
            w3: MaskedWeight::new(w3, block)?,
        })
    }

    /// Gaussian init with standard deviation `1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(embed: usize, hidden: usize, block: usize, rng: &mut R) -> Result<Self> {
        let s_in = 1.0 / (embed as f32).sqrt();
        let s_out = 1.0 / (hidden as f32).sqrt();
        let w1 = Matrix::random_normal(embed, hidden, s_in, rng);
        let w2 = Matrix::random_normal(embed, hidden, s_in, rng);
        let w3 = Matrix::random_normal(hidden, embed, s_out, rng);
        Self::new(w1, w2, w3, block)
    }

    pub fn embed(&self) -> usize {
        self.w1.dense.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.dense.cols()
    }

    pub fn weights(&self) -> [&MaskedWeight; 3] {
        [&self.w1, &self.w2, &self.w3]
    }

    pub fn weights_mut(&mut self) -> [&mut MaskedWeight; 3] {
        [&mut self.w1, &mut self.w2, &mut self.w3]
    }
}

/// Intermediates saved by the forward pass.
#[derive(Clone, Debug)]
pub struct MlpActivations {
    pub x: Matrix,
    /// `X W1`
    pub a: Matrix,
    /// `X W2`
    pub b: Matrix,
    /// `silu(A) * B`
    pub g: Matrix,
}

#[derive(Clone, Debug)]
pub struct MlpGradients {
    pub dx: Matrix,
    pub dw1: Matrix,
    pub dw2: Matrix,
    pub dw3: Matrix,
}

pub fn mlp_forward(x: &Matrix, mlp: &SparseMlp) -> Result<(Matrix, MlpActivations)> {
    if x.cols() != mlp.embed() {
        return Err(mismatch("mlp_forward", format!("X has {} features, MLP embedding is {}", x.cols(), mlp.embed())));
    }
    let (a, b) = rayon::join(|| bspmm(x, &mlp.w1.packed), || bspmm(x, &mlp.w2.packed));
    let (a, b) = (a?, b?);
    let g = a.zip_map(&b, |av, bv| silu(av) * bv)?;
    let y = bspmm(&g, &mlp.w3.packed)?;
    Ok((y, MlpActivations { x: x.clone(), a, b, g }))
}

/// Exact gradients of the block with the masked weights as parameters.
///
/// Weight gradients are dense over the full grid; pruned blocks get their
/// true gradient too, which the regrow step reads.
pub fn mlp_backward(dy: &Matrix, saved: &MlpActivations, mlp: &SparseMlp) -> Result<MlpGradients> {
    let m = saved.x.rows();
    if dy.shape() != (m, mlp.embed())
        || saved.a.shape() != (m, mlp.hidden())
        || saved.b.shape() != saved.a.shape()
        || saved.g.shape() != saved.a.shape()
    {
        return Err(mismatch(
            "mlp_backward",
            format!("dY {:?} does not match saved activations for X {:?}", dy.shape(), saved.x.shape()),
        ));
    }
    let (dw3, dg) = rayon::join(|| matmul_tn(&saved.g, dy), || bspmm(dy, &mlp.w3.packed_t));
    let (dw3, dg) = (dw3?, dg?);

    let hidden = mlp.hidden();
    let mut da = Matrix::zeros(m, hidden);
    let mut db = Matrix::zeros(m, hidden);
    {
        let (a, b, dgs) = (saved.a.as_slice(), saved.b.as_slice(), dg.as_slice());
        for (idx, (da_v, db_v)) in da.as_mut_slice().iter_mut().zip(db.as_mut_slice().iter_mut()).enumerate() {
            *da_v = dgs[idx] * b[idx] * silu_grad(a[idx]);
            *db_v = dgs[idx] * silu(a[idx]);
        }
    }

    let ((dw1, dw2), (dx1, dx2)) = rayon::join(
        || rayon::join(|| matmul_tn(&saved.x, &da), || matmul_tn(&saved.x, &db)),
        || rayon::join(|| bspmm(&da, &mlp.w1.packed_t), || bspmm(&db, &mlp.w2.packed_t)),
    );
    let dx = dx1?.zip_map(&dx2?, |p, q| p + q)?;
    Ok(MlpGradients { dx, dw1: dw1?, dw2: dw2?, dw3 })
}

/// An MLP block that remembers its last forward pass.
#[derive(Clone, Debug)]
pub struct MlpLayer {
    pub mlp: SparseMlp,
    saved: Option<MlpActivations>,
}

impl MlpLayer {
    pub fn new(mlp: SparseMlp) -> Self {
        Self { mlp, saved: None }
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let (y, act) = mlp_forward(x, &self.mlp)?;
        self.saved = Some(act);
        Ok(y)
    }

    /// Consumes the saved activations.
    pub fn backward(&mut self, dy: &Matrix) -> Result<MlpGradients> {
        let saved = self.saved.take().ok_or(Error::MissingActivations)?;
        mlp_backward(dy, &saved, &self.mlp)
    }

    /// Forward without keeping activations.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        mlp_forward(x, &self.mlp).map(|(y, _)| y)
    }
}
