//! Row-major dense `f32` matrices and the `DNSE` interchange file.
//!
//! The `DNSE` layout is a 16-byte little-endian header followed by the
//! payload:
//!
//! ```text
//! magic  "DNSE"   4 bytes
//! rows   u32
//! cols   u32
//! pad    4 zero bytes
//! data   rows * cols f32, row-major
//! ```

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{mismatch, Error, Result};

pub const DENSE_MAGIC: [u8; 4] = *b"DNSE";
const DENSE_HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch("Matrix::from_vec", format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Entries drawn from `N(0, scale^2)`.
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f32, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(mismatch("Matrix::zip_map", format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0` and comparing NaN payloads.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn write_dnse<W: Write>(&self, mut w: W) -> Result<()> {
        let rows =
            u32::try_from(self.rows).map_err(|_| Error::InvalidArgument(format!("{} rows exceed u32", self.rows)))?;
        let cols =
            u32::try_from(self.cols).map_err(|_| Error::InvalidArgument(format!("{} cols exceed u32", self.cols)))?;
        let mut buf = Vec::with_capacity(DENSE_HEADER_LEN + 4 * self.data.len());
        buf.extend_from_slice(&DENSE_MAGIC);
        buf.extend_from_slice(&rows.to_le_bytes());
        buf.extend_from_slice(&cols.to_le_bytes());
        buf.extend_from_slice(&[0u8; 4]);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dnse<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_dnse_bytes(&bytes)
    }

    pub fn from_dnse_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DENSE_HEADER_LEN {
            return Err(Error::Truncated { what: "DNSE header", needed: DENSE_HEADER_LEN - bytes.len() });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != DENSE_MAGIC {
            return Err(Error::BadMagic { expected: DENSE_MAGIC, found: magic });
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[DENSE_HEADER_LEN..];
        let want = rows * cols * 4;
        if payload.len() < want {
            return Err(Error::Truncated { what: "DNSE values", needed: want - payload.len() });
        }
        let data = payload[..want].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { rows, cols, data })
    }
}

/// `a^T * b` for `a: M x K`, `b: M x N`, giving `K x N`.
///
/// Each output row is owned by one worker and reduced over `M` in ascending
/// order, so the result does not depend on the thread count.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(mismatch("matmul_tn", format!("a is {:?}, b is {:?}", a.shape(), b.shape())));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(k, n);
    if n == 0 {
        return Ok(out);
    }
    out.data.par_chunks_mut(n).enumerate().for_each(|(kk, out_row)| {
        for i in 0..m {
            let av = a.data[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dnse_round_trip_and_header() {
        let m = Matrix::from_fn(3, 5, |r, c| (r * 10 + c) as f32 - 7.5);
        let mut buf = Vec::new();
        m.write_dnse(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 15 * 4);
        assert_eq!(&buf[0..4], b"DNSE");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 5);
        let back = Matrix::from_dnse_bytes(&buf).unwrap();
        assert!(back.bit_eq(&m));
    }

    #[test]
    fn dnse_rejects_bad_input() {
        assert!(matches!(Matrix::from_dnse_bytes(b"DNS"), Err(Error::Truncated { .. })));
        let mut buf = Vec::new();
        Matrix::zeros(2, 2).write_dnse(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(Matrix::from_dnse_bytes(&buf), Err(Error::BadMagic { .. })));
        buf[0] = b'D';
        buf.truncate(buf.len() - 1);
        assert!(matches!(Matrix::from_dnse_bytes(&buf), Err(Error::Truncated { .. })));
    }

    #[test]
    fn matmul_tn_matches_transpose_product() {
        let a = Matrix::from_fn(4, 3, |r, c| (r as f32) - (c as f32) * 0.5);
        let b = Matrix::from_fn(4, 2, |r, c| (r * 2 + c) as f32 * 0.25);
        let got = matmul_tn(&a, &b).unwrap();
        let at = a.transpose();
        for i in 0..3 {
            for j in 0..2 {
                let want: f32 = (0..4).map(|k| at.get(i, k) * b.get(k, j)).sum();
                assert!((got.get(i, j) - want).abs() < 1e-6);
            }
        }
        assert!(matmul_tn(&a, &Matrix::zeros(3, 2)).is_err());
    }
}
