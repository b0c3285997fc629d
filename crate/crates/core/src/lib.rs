//! Block-sparse linear algebra and blocked prune-and-grow sparse training.
//!
//! - [`bcsc`]: blocked compressed sparse column storage and its binary format
//! - [`bspmm`]: `Y = f(X W)` for dense `X` and block-sparse `W`
//! - [`mlp`]: gated SiLU MLP forward/backward on block-sparse weights
//! - [`pruner`]: cubic sparsity schedule, block-norm pruning and gradient regrowth
//! - [`trainer`]: toy-scale training loop with scheduled mask refresh
//! - [`bench`] and [`footprint`]: kernel timing sweeps and GPU-count estimates

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bcsc;
pub mod bench;
pub mod bspmm;
pub mod dense;
pub mod error;
pub mod footprint;
pub mod mask;
pub mod mlp;
pub mod pruner;
pub mod trainer;

pub use bcsc::BlockSparseMatrix;
pub use bspmm::{bspmm, bspmm_fused, flops, FlopCount, KernelOptions, Nonlinearity};
pub use dense::Matrix;
pub use error::{Error, Result};
pub use mask::{BlockMask, BoolGrid};
pub use mlp::{mlp_backward, mlp_forward, MlpActivations, MlpGradients, SparseMlp};
pub use pruner::{apply_mask, block_norms, generate_masks, prune_s, PruneReport, SparsitySchedule};
pub use trainer::{train, TrainConfig, TrainLog};
