//! C ABI over `blocksparse`.
//!
//! Conventions:
//! - every fallible call returns a [`BsStatus`]; results go through out-pointers
//! - on failure, [`bs_last_error_message`] describes the error (per thread)
//! - matrices are opaque [`BsMatrix`] handles released with [`bs_matrix_free`]
//! - buffers from [`bs_matrix_serialize`] are released with [`bs_buffer_free`]
//! - dense arrays are row-major `float`
//!
//! Panics never cross the boundary; they are reported as `BS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use blocksparse::bcsc::grid_dim;
use blocksparse::footprint::{gpu_calc, FootprintQuery, MlpShare};
use blocksparse::{BlockMask, BlockSparseMatrix, BoolGrid, Error, Matrix, Nonlinearity, SparsitySchedule};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Malformed or unsupported serialized data.
    Format = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BsNonlinearity {
    None = 0,
    Relu = 1,
    Gelu = 2,
    Silu = 3,
}

impl From<BsNonlinearity> for Nonlinearity {
    fn from(f: BsNonlinearity) -> Self {
        match f {
            BsNonlinearity::None => Nonlinearity::None,
            BsNonlinearity::Relu => Nonlinearity::Relu,
            BsNonlinearity::Gelu => Nonlinearity::Gelu,
            BsNonlinearity::Silu => Nonlinearity::Silu,
        }
    }
}

/// Opaque block-sparse matrix.
pub struct BsMatrix {
    inner: BlockSparseMatrix,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BsSchedule {
    pub s_init: f64,
    pub s_max: f64,
    pub total_iters: usize,
    pub decay: usize,
    pub step_size: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BsFootprint {
    pub dense_bytes: f64,
    pub sparse_bytes: f64,
    pub dense_gpus: u64,
    pub sparse_gpus: u64,
    pub reduction: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BsFlops {
    pub dense: u64,
    pub sparse: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> BsStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::MaskShape { .. } => BsStatus::DimensionMismatch,
        Error::BadMagic { .. } | Error::UnsupportedVersion(_) | Error::Truncated { .. } | Error::Invariant(_) => {
            BsStatus::Format
        }
        Error::Io(_) => BsStatus::Io,
        _ => BsStatus::InvalidArgument,
    }
}

struct Fail(BsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(BsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            BsStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a>(m: *const BsMatrix) -> Result<&'a BlockSparseMatrix, Fail> {
    m.as_ref().map(|h| &h.inner).ok_or_else(|| null("matrix handle"))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn boxed(inner: BlockSparseMatrix) -> *mut BsMatrix {
    Box::into_raw(Box::new(BsMatrix { inner }))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s =
        CStr::from_ptr(p).to_str().map_err(|_| Fail(BsStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn elems(rows: usize, cols: usize) -> Result<usize, Fail> {
    rows.checked_mul(cols).ok_or_else(|| Fail(BsStatus::InvalidArgument, format!("{rows}x{cols} overflows")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread ("" if none). Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Pack a dense `rows x cols` matrix. `mask` is either null (store every
/// block that is not all zero) or `ceil(rows/block) * ceil(cols/block)`
/// row-major flags naming the blocks to keep.
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_from_dense(
    data: *const f32,
    rows: usize,
    cols: usize,
    block: usize,
    mask: *const bool,
    out: *mut *mut BsMatrix,
) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let vals = slice_in(data, elems(rows, cols)?, "data")?;
        let dense = Matrix::from_vec(rows, cols, vals.to_vec())?;
        let w = if mask.is_null() {
            BlockSparseMatrix::from_dense(&dense, block, None)?
        } else {
            if block == 0 {
                return Err(Error::ZeroBlockSize.into());
            }
            let (gr, gc) = (grid_dim(rows, block), grid_dim(cols, block));
            let cells = slice_in(mask, elems(gr, gc)?, "mask")?.to_vec();
            let kept = BoolGrid::from_cells(gr, gc, cells)?;
            let mask = BlockMask::new(kept, BoolGrid::new(gr, gc, false))?;
            BlockSparseMatrix::from_dense(&dense, block, Some(&mask))?
        };
        out.write(boxed(w));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bs_matrix_free(m: *mut BsMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Any of the out-pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_shape(
    m: *const BsMatrix,
    rows: *mut usize,
    cols: *mut usize,
    block: *mut usize,
    nnzb: *mut usize,
) -> BsStatus {
    guard(|| {
        let w = handle(m)?;
        for (p, v) in [(rows, w.rows()), (cols, w.cols()), (block, w.block()), (nnzb, w.nnzb())] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bs_matrix_block_sparsity(m: *const BsMatrix, out: *mut f64) -> BsStatus {
    guard(|| {
        let w = handle(m)?;
        put(out, w.block_sparsity(), "out")
    })
}

/// Write the dense form into `out`, which must hold exactly `rows * cols` floats.
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_to_dense(m: *const BsMatrix, out: *mut f32, len: usize) -> BsStatus {
    guard(|| {
        let w = handle(m)?;
        let need = w.rows() * w.cols();
        if len != need {
            return Err(Fail(BsStatus::DimensionMismatch, format!("output holds {len} floats, matrix has {need}")));
        }
        slice_out(out, len, "out")?.copy_from_slice(w.to_dense().as_slice());
        Ok(())
    })
}

/// New handle holding the transpose.
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_transpose(m: *const BsMatrix, out: *mut *mut BsMatrix) -> BsStatus {
    guard(|| {
        let w = handle(m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(boxed(w.transpose()));
        Ok(())
    })
}

/// Serialize to a fresh buffer; release it with [`bs_buffer_free`].
#[no_mangle]
pub unsafe extern "C" fn bs_matrix_serialize(
    m: *const BsMatrix,
    out_buf: *mut *mut u8,
    out_len: *mut usize,
) -> BsStatus {
    guard(|| {
        let w = handle(m)?;
        if out_buf.is_null() || out_len.is_null() {
            return Err(null("out_buf or out_len"));
        }
        let bytes = w.to_bytes().into_boxed_slice();
        out_len.write(bytes.len());
        out_buf.write(Box::into_raw(bytes).cast());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bs_buffer_free(buf: *mut u8, len: usize) {
    if !buf.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf, len)));
    }
}

#[no_mangle]
pub unsafe extern "C" fn bs_matrix_deserialize(buf: *const u8, len: usize, out: *mut *mut BsMatrix) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let bytes = slice_in(buf, len, "buf")?;
        out.write(boxed(BlockSparseMatrix::from_bytes(bytes)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bs_matrix_save(m: *const BsMatrix, path: *const c_char) -> BsStatus {
    guard(|| {
        let w = handle(m)?;
        let path = path_arg(path)?;
        let file = std::fs::File::create(&path).map_err(Error::from)?;
        w.write_to(std::io::BufWriter::new(file))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bs_matrix_load(path: *const c_char, out: *mut *mut BsMatrix) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let bytes = std::fs::read(&path).map_err(Error::from)?;
        out.write(boxed(BlockSparseMatrix::from_bytes(&bytes)?));
        Ok(())
    })
}

/// `y = f(x w)` with `x` of shape `m x k` and `y` of shape `m x cols(w)`.
#[no_mangle]
pub unsafe extern "C" fn bs_spmm(
    x: *const f32,
    m: usize,
    k: usize,
    w: *const BsMatrix,
    f: BsNonlinearity,
    y: *mut f32,
    y_len: usize,
) -> BsStatus {
    guard(|| {
        let w = handle(w)?;
        let xs = Matrix::from_vec(m, k, slice_in(x, elems(m, k)?, "x")?.to_vec())?;
        let need = elems(m, w.cols())?;
        if y_len != need {
            return Err(Fail(BsStatus::DimensionMismatch, format!("output holds {y_len} floats, product has {need}")));
        }
        let out = blocksparse::bspmm_fused(&xs, w, f.into())?;
        slice_out(y, y_len, "y")?.copy_from_slice(out.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn bs_flops(m: u64, n: u64, k: u64, nnzb: u64, block: u64) -> BsFlops {
    let f = blocksparse::flops(m, n, k, nnzb, block);
    BsFlops { dense: f.dense, sparse: f.sparse }
}

#[no_mangle]
pub unsafe extern "C" fn bs_target_sparsity(sched: *const BsSchedule, iteration: usize, out: *mut f64) -> BsStatus {
    guard(|| {
        let s = sched.as_ref().ok_or_else(|| null("schedule"))?;
        let sched = SparsitySchedule::new(s.s_init, s.s_max, s.total_iters, s.decay, s.step_size)?;
        put(out, sched.target_sparsity(iteration)?, "out")
    })
}

/// Footprint for `params` parameters of which `mlp_params` are sparsified
/// to `sparsity`. Pass 0 for `bytes_per_param` / `hbm_bytes` to get the
/// defaults (4 and 96e9).
#[no_mangle]
pub unsafe extern "C" fn bs_gpu_calc(
    params: f64,
    mlp_params: f64,
    sparsity: f64,
    bytes_per_param: f64,
    hbm_bytes: f64,
    out: *mut BsFootprint,
) -> BsStatus {
    guard(|| {
        let mut q = FootprintQuery::new(params, MlpShare::Count(mlp_params), sparsity);
        if bytes_per_param != 0.0 {
            q.bytes_per_param = bytes_per_param;
        }
        if hbm_bytes != 0.0 {
            q.hbm_bytes = hbm_bytes;
        }
        let r = gpu_calc(&q)?;
        put(
            out,
            BsFootprint {
                dense_bytes: r.dense_bytes,
                sparse_bytes: r.sparse_bytes,
                dense_gpus: r.dense_gpus,
                sparse_gpus: r.sparse_gpus,
                reduction: r.reduction,
            },
            "out",
        )
    })
}

/// One prune-and-grow step on dense `rows x cols` weight `w` and gradient
/// `g`. `kept` and `regrown` receive `ceil(rows/block) * ceil(cols/block)`
/// row-major flags each.
#[no_mangle]
pub unsafe extern "C" fn bs_generate_masks(
    w: *const f32,
    g: *const f32,
    rows: usize,
    cols: usize,
    block: usize,
    sparsity: f64,
    kept: *mut bool,
    regrown: *mut bool,
    grid_len: usize,
) -> BsStatus {
    guard(|| {
        let n = elems(rows, cols)?;
        let wm = Matrix::from_vec(rows, cols, slice_in(w, n, "w")?.to_vec())?;
        let gm = Matrix::from_vec(rows, cols, slice_in(g, n, "g")?.to_vec())?;
        let (mask, _) = blocksparse::generate_masks(&wm, &gm, block, sparsity)?;
        if grid_len != mask.total() {
            return Err(Fail(
                BsStatus::DimensionMismatch,
                format!("mask buffers hold {grid_len} flags, grid has {}", mask.total()),
            ));
        }
        slice_out(kept, grid_len, "kept")?.copy_from_slice(mask.kept().cells());
        slice_out(regrown, grid_len, "regrown")?.copy_from_slice(mask.regrown().cells());
        Ok(())
    })
}
