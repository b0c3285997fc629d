//! Blocked compressed sparse column (BCSC) storage.
//!
//! A `rows x cols` matrix is viewed as a `grid_rows x grid_cols` grid of
//! square `b x b` blocks (boundary blocks are zero-padded). Only the stored
//! blocks are kept, laid out column by column:
//!
//! - `col_ptr[c]..col_ptr[c + 1]` is the range of stored blocks in block column `c`
//! - `block_row_idx[k]` is the block row of stored block `k` (strictly increasing per column)
//! - `values[k * b * b..(k + 1) * b * b]` is block `k`, row-major
//!
//! # Binary format
//!
//! All integers little-endian, no padding or compression:
//!
//! ```text
//! magic          "BCSC"
//! version        u32 = 1
//! rows           u64
//! cols           u64
//! block          u32
//! nnzb           u64
//! col_ptr        (grid_cols + 1) x u64
//! block_row_idx  nnzb x u32
//! values         nnzb * block * block x f32
//! ```

use std::io::{Read, Write};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::mask::BlockMask;

pub const BCSC_MAGIC: [u8; 4] = *b"BCSC";
pub const BCSC_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSparseMatrix {
    rows: usize,
    cols: usize,
    block: usize,
    grid_rows: usize,
    grid_cols: usize,
    col_ptr: Vec<usize>,
    block_row_idx: Vec<u32>,
    values: Vec<f32>,
}

#[inline]
pub fn grid_dim(n: usize, b: usize) -> usize {
    n.div_ceil(b)
}

impl BlockSparseMatrix {
    /// Matrix with no stored blocks.
    pub fn empty(rows: usize, cols: usize, block: usize) -> Result<Self> {
        if block == 0 {
            return Err(Error::ZeroBlockSize);
        }
        let grid_cols = grid_dim(cols, block);
        Ok(Self {
            rows,
            cols,
            block,
            grid_rows: grid_dim(rows, block),
            grid_cols,
            col_ptr: vec![0; grid_cols + 1],
            block_row_idx: Vec::new(),
            values: Vec::new(),
        })
    }

    /// Pack a dense matrix.
    ///
    /// With a mask, exactly the active blocks are stored (even if their
    /// content is zero). Without one, every block holding a nonzero bit
    /// pattern is stored, so `-0.0` survives a round trip.
    pub fn from_dense(dense: &Matrix, block: usize, mask: Option<&BlockMask>) -> Result<Self> {
        if block == 0 {
            return Err(Error::ZeroBlockSize);
        }
        let (rows, cols) = dense.shape();
        let grid_rows = grid_dim(rows, block);
        let grid_cols = grid_dim(cols, block);
        if let Some(m) = mask {
            m.check_dims(grid_rows, grid_cols)?;
        }
        let bb = block * block;
        let mut col_ptr = Vec::with_capacity(grid_cols + 1);
        let mut block_row_idx = Vec::new();
        let mut values = Vec::new();
        let mut scratch = vec![0.0f32; bb];
        col_ptr.push(0);
        for bc in 0..grid_cols {
            let c0 = bc * block;
            let cw = block.min(cols - c0);
            for br in 0..grid_rows {
                let r0 = br * block;
                let rh = block.min(rows - r0);
                let store = match mask {
                    Some(m) => m.is_active(br, bc),
                    None => (0..rh).any(|i| dense.row(r0 + i)[c0..c0 + cw].iter().any(|v| v.to_bits() != 0)),
                };
                if !store {
                    continue;
                }
                scratch.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..rh {
                    scratch[i * block..i * block + cw].copy_from_slice(&dense.row(r0 + i)[c0..c0 + cw]);
                }
                block_row_idx.push(br as u32);
                values.extend_from_slice(&scratch);
            }
            col_ptr.push(block_row_idx.len());
        }
        Ok(Self { rows, cols, block, grid_rows, grid_cols, col_ptr, block_row_idx, values })
    }

    /// Build from raw arrays, validating every structural invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        block: usize,
        col_ptr: Vec<usize>,
        block_row_idx: Vec<u32>,
        values: Vec<f32>,
    ) -> Result<Self> {
        if block == 0 {
            return Err(Error::ZeroBlockSize);
        }
        let m = Self {
            rows,
            cols,
            block,
            grid_rows: grid_dim(rows, block),
            grid_cols: grid_dim(cols, block),
            col_ptr,
            block_row_idx,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let inv = |s: String| Err(Error::Invariant(s));
        let nnzb = self.block_row_idx.len();
        if self.col_ptr.len() != self.grid_cols + 1 {
            return inv(format!("col_ptr has {} entries, expected {}", self.col_ptr.len(), self.grid_cols + 1));
        }
        if self.col_ptr[0] != 0 {
            return inv("col_ptr[0] must be 0".into());
        }
        if self.col_ptr[self.grid_cols] != nnzb {
            return inv(format!("col_ptr ends at {}, but there are {nnzb} blocks", self.col_ptr[self.grid_cols]));
        }
        if self.col_ptr.windows(2).any(|w| w[0] > w[1]) {
            return inv("col_ptr must be nondecreasing".into());
        }
        let bb = self.block * self.block;
        if self.values.len() != nnzb * bb {
            return inv(format!("{} values for {nnzb} blocks of {bb}", self.values.len()));
        }
        for c in 0..self.grid_cols {
            let rows = &self.block_row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
            if rows.windows(2).any(|w| w[0] >= w[1]) {
                return inv(format!("block rows in column {c} not strictly increasing"));
            }
            if let Some(&last) = rows.last() {
                if last as usize >= self.grid_rows {
                    return inv(format!("block row {last} in column {c} >= grid_rows {}", self.grid_rows));
                }
            }
        }
        // Padding must be zero.
        let row_tail = self.grid_rows * self.block - self.rows;
        let col_tail = self.grid_cols * self.block - self.cols;
        if row_tail > 0 || col_tail > 0 {
            for (c, r, blk) in self.blocks() {
                let rh = if r + 1 == self.grid_rows { self.block - row_tail } else { self.block };
                let cw = if c + 1 == self.grid_cols { self.block - col_tail } else { self.block };
                for i in 0..self.block {
                    for j in 0..self.block {
                        if (i >= rh || j >= cw) && blk[i * self.block + j].to_bits() != 0 {
                            return inv(format!("nonzero padding in block ({r}, {c})"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        let b = self.block;
        for (c, r, blk) in self.blocks() {
            let (r0, c0) = (r * b, c * b);
            let rh = b.min(self.rows - r0);
            let cw = b.min(self.cols - c0);
            let cols = self.cols;
            let data = out.as_mut_slice();
            for i in 0..rh {
                data[(r0 + i) * cols + c0..(r0 + i) * cols + c0 + cw].copy_from_slice(&blk[i * b..i * b + cw]);
            }
        }
        out
    }

    /// `W^T` in BCSC form. Each block is transposed in place of its mirror.
    pub fn transpose(&self) -> Self {
        let b = self.block;
        let bb = b * b;
        let mut counts = vec![0usize; self.grid_rows + 1];
        for &r in &self.block_row_idx {
            counts[r as usize + 1] += 1;
        }
        for i in 0..self.grid_rows {
            counts[i + 1] += counts[i];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let nnzb = self.nnzb();
        let mut block_row_idx = vec![0u32; nnzb];
        let mut values = vec![0.0f32; nnzb * bb];
        // Ascending source columns give ascending destination rows.
        for (c, r, blk) in self.blocks() {
            let dst = next[r];
            next[r] += 1;
            block_row_idx[dst] = c as u32;
            let out = &mut values[dst * bb..(dst + 1) * bb];
            for i in 0..b {
                for j in 0..b {
                    out[j * b + i] = blk[i * b + j];
                }
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            block: b,
            grid_rows: self.grid_cols,
            grid_cols: self.grid_rows,
            col_ptr,
            block_row_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn nnzb(&self) -> usize {
        self.block_row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn block_row_idx(&self) -> &[u32] {
        &self.block_row_idx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn block_values(&self, k: usize) -> &[f32] {
        let bb = self.block * self.block;
        &self.values[k * bb..(k + 1) * bb]
    }

    /// Stored block at grid position `(r, c)`, if any.
    pub fn get_block(&self, r: usize, c: usize) -> Option<&[f32]> {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        let rows = &self.block_row_idx[range.clone()];
        rows.binary_search(&(r as u32)).ok().map(|i| self.block_values(range.start + i))
    }

    /// `(block_col, block_row, values)` for every stored block in storage order.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, &[f32])> + '_ {
        (0..self.grid_cols).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1])
                .map(move |k| (c, self.block_row_idx[k] as usize, self.block_values(k)))
        })
    }

    pub fn block_sparsity(&self) -> f64 {
        let total = self.grid_rows * self.grid_cols;
        if total == 0 {
            return 0.0;
        }
        1.0 - self.nnzb() as f64 / total as f64
    }

    pub fn serialized_len(&self) -> usize {
        4 + 4 + 8 + 8 + 4 + 8 + 8 * self.col_ptr.len() + 4 * self.nnzb() + 4 * self.values.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.serialized_len());
        buf.extend_from_slice(&BCSC_MAGIC);
        buf.extend_from_slice(&BCSC_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.rows as u64).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u64).to_le_bytes());
        buf.extend_from_slice(&(self.block as u32).to_le_bytes());
        buf.extend_from_slice(&(self.nnzb() as u64).to_le_bytes());
        for &p in &self.col_ptr {
            buf.extend_from_slice(&(p as u64).to_le_bytes());
        }
        for &r in &self.block_row_idx {
            buf.extend_from_slice(&r.to_le_bytes());
        }
        for &v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader { bytes, pos: 0 };
        let magic: [u8; 4] = rd.take(4, "magic")?.try_into().unwrap();
        if magic != BCSC_MAGIC {
            return Err(Error::BadMagic { expected: BCSC_MAGIC, found: magic });
        }
        let version = rd.u32("version")?;
        if version != BCSC_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let rows = rd.usize_u64("rows")?;
        let cols = rd.usize_u64("cols")?;
        let block = rd.u32("block")? as usize;
        let nnzb = rd.usize_u64("nnzb")?;
        if block == 0 {
            return Err(Error::ZeroBlockSize);
        }
        let grid_cols = grid_dim(cols, block);
        // Size checks before allocating anything proportional to header fields.
        let bb = block.checked_mul(block).ok_or_else(|| Error::Invariant("block size overflows".into()))?;
        let needed = (grid_cols + 1)
            .checked_mul(8)
            .zip(nnzb.checked_mul(4))
            .and_then(|(a, b)| nnzb.checked_mul(bb).and_then(|v| v.checked_mul(4)).map(|c| a + b + c))
            .ok_or_else(|| Error::Invariant("header sizes overflow".into()))?;
        if rd.remaining() < needed {
            return Err(Error::Truncated { what: "BCSC arrays", needed: needed - rd.remaining() });
        }
        let col_ptr = (0..=grid_cols).map(|_| rd.usize_u64("col_ptr")).collect::<Result<Vec<_>>>()?;
        let block_row_idx = (0..nnzb).map(|_| rd.u32("block_row_idx")).collect::<Result<Vec<_>>>()?;
        let values = rd
            .take(nnzb * bb * 4, "values")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_parts(rows, cols, block, col_ptr, block_row_idx, values)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated { what, needed: n - self.remaining() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn usize_u64(&mut self, what: &'static str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Invariant(format!("{what} = {v} exceeds usize")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_stores_diagonal_blocks() {
        let w = BlockSparseMatrix::from_dense(&Matrix::identity(4), 2, None).unwrap();
        assert_eq!(w.nnzb(), 2);
        assert_eq!(w.block_row_idx(), &[0, 1]);
        assert_eq!(w.col_ptr(), &[0, 1, 2]);
        assert_eq!(w.block_values(0), &[1.0, 0.0, 0.0, 1.0]);
        assert!(w.to_dense().bit_eq(&Matrix::identity(4)));
        assert_eq!(w.block_sparsity(), 0.5);
    }

    #[test]
    fn boundary_blocks_are_zero_padded() {
        let ones = Matrix::from_fn(5, 5, |_, _| 1.0);
        let w = BlockSparseMatrix::from_dense(&ones, 2, None).unwrap();
        assert_eq!((w.grid_rows(), w.grid_cols()), (3, 3));
        assert_eq!(w.nnzb(), 9);
        // Bottom-right block holds only element (4, 4).
        assert_eq!(w.get_block(2, 2).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(w.get_block(0, 2).unwrap(), &[1.0, 0.0, 1.0, 0.0]);
        assert!(w.to_dense().bit_eq(&ones));
        w.validate().unwrap();
    }

    #[test]
    fn mask_keeps_only_active_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = Matrix::random_normal(8, 8, 1.0, &mut rng);
        let mask = BlockMask::from_active(2, 2, [(0, 0), (1, 1)]).unwrap();
        let w = BlockSparseMatrix::from_dense(&d, 4, Some(&mask)).unwrap();
        assert_eq!(w.nnzb(), 2);
        let expect = Matrix::from_fn(8, 8, |r, c| if (r < 4) == (c < 4) { d.get(r, c) } else { 0.0 });
        assert!(w.to_dense().bit_eq(&expect));
    }

    #[test]
    fn empty_matrix_is_zero() {
        let w = BlockSparseMatrix::empty(4, 4, 2).unwrap();
        assert_eq!(w.block_sparsity(), 1.0);
        assert!(w.to_dense().bit_eq(&Matrix::zeros(4, 4)));
        let full = BlockSparseMatrix::from_dense(&Matrix::from_fn(4, 4, |_, _| 1.0), 2, None).unwrap();
        assert_eq!(full.block_sparsity(), 0.0);
    }

    #[test]
    fn construction_errors() {
        let d = Matrix::zeros(4, 4);
        assert!(matches!(BlockSparseMatrix::from_dense(&d, 0, None), Err(Error::ZeroBlockSize)));
        let mask = BlockMask::full(3, 2);
        assert!(matches!(BlockSparseMatrix::from_dense(&d, 2, Some(&mask)), Err(Error::MaskShape { .. })));
    }

    #[test]
    fn from_parts_rejects_broken_structure() {
        // Unsorted rows in a column.
        let r = BlockSparseMatrix::from_parts(4, 2, 2, vec![0, 2], vec![1, 0], vec![0.0; 8]);
        assert!(matches!(r, Err(Error::Invariant(_))));
        // Block row out of range.
        let r = BlockSparseMatrix::from_parts(4, 2, 2, vec![0, 1], vec![2], vec![0.0; 4]);
        assert!(matches!(r, Err(Error::Invariant(_))));
        // Nonzero padding.
        let r = BlockSparseMatrix::from_parts(3, 2, 2, vec![0, 1], vec![1], vec![1.0, 1.0, 1.0, 0.0]);
        assert!(matches!(r, Err(Error::Invariant(_))));
        // Empty columns are fine.
        BlockSparseMatrix::from_parts(4, 6, 2, vec![0, 0, 1, 1], vec![1], vec![0.5; 4]).unwrap();
    }

    #[test]
    fn transpose_matches_dense_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Matrix::random_normal(7, 5, 1.0, &mut rng);
        let mask = BlockMask::from_active(3, 2, [(0, 1), (2, 0), (1, 1)]).unwrap();
        let w = BlockSparseMatrix::from_dense(&d, 3, Some(&mask)).unwrap();
        let t = w.transpose();
        t.validate().unwrap();
        assert!(t.to_dense().bit_eq(&w.to_dense().transpose()));
    }

    #[test]
    fn header_layout() {
        let w = BlockSparseMatrix::from_dense(&Matrix::identity(4), 2, None).unwrap();
        let bytes = w.to_bytes();
        assert_eq!(bytes.len(), w.serialized_len());
        assert_eq!(&bytes[0..4], b"BCSC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[28..36].try_into().unwrap()), 2);
    }

    #[test]
    fn deserialize_errors() {
        let w = BlockSparseMatrix::from_dense(&Matrix::identity(4), 2, None).unwrap();
        let mut bytes = w.to_bytes();
        assert!(matches!(BlockSparseMatrix::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(BlockSparseMatrix::from_bytes(&bytes[..10]), Err(Error::Truncated { .. })));
        bytes[4] = 9;
        assert!(matches!(BlockSparseMatrix::from_bytes(&bytes), Err(Error::UnsupportedVersion(9))));
        bytes[4] = 1;
        bytes[2] = b'X';
        assert!(matches!(BlockSparseMatrix::from_bytes(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn deserialize_rejects_invariant_violation() {
        let w = BlockSparseMatrix::from_dense(&Matrix::identity(4), 2, None).unwrap();
        let mut bytes = w.to_bytes();
        // Second block_row_idx entry sits after 36 header bytes + 3 col_ptr u64s + 1 u32.
        let off = 36 + 3 * 8 + 4;
        bytes[off..off + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(BlockSparseMatrix::from_bytes(&bytes), Err(Error::Invariant(_))));
    }
}
