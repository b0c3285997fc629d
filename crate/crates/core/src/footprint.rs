//! GPU-count estimates for storing model weights after MLP sparsification.
//!
//! ```text
//! dense_bytes  = params * bytes_per_param
//! sparse_bytes = (params - mlp_params * s) * bytes_per_param
//! gpus         = ceil(bytes / hbm_bytes)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BYTES_PER_PARAM: f64 = 4.0;
pub const DEFAULT_HBM_BYTES: f64 = 96e9;

/// How many of the parameters sit in sparsifiable MLP weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpShare {
    Fraction(f64),
    Count(f64),
    /// Gated MLP stack: `matrices * embed * hidden` parameters per layer, with
    /// `dense_layers` of `layers` left unpruned.
    Architecture {
        layers: u64,
        embed: u64,
        hidden: u64,
        #[serde(default = "three")]
        matrices: u64,
        #[serde(default)]
        dense_layers: u64,
    },
}

fn three() -> u64 {
    3
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootprintQuery {
    pub params: f64,
    pub mlp: MlpShare,
    pub sparsity: f64,
    #[serde(default = "default_bpp")]
    pub bytes_per_param: f64,
    #[serde(default = "default_hbm")]
    pub hbm_bytes: f64,
}

fn default_bpp() -> f64 {
    DEFAULT_BYTES_PER_PARAM
}

fn default_hbm() -> f64 {
    DEFAULT_HBM_BYTES
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub mlp_params: f64,
    pub dense_bytes: f64,
    pub sparse_bytes: f64,
    pub dense_gpus: u64,
    pub sparse_gpus: u64,
    pub reduction: f64,
}

impl FootprintQuery {
    pub fn new(params: f64, mlp: MlpShare, sparsity: f64) -> Self {
        Self { params, mlp, sparsity, bytes_per_param: DEFAULT_BYTES_PER_PARAM, hbm_bytes: DEFAULT_HBM_BYTES }
    }

    pub fn mlp_params(&self) -> f64 {
        match self.mlp {
            MlpShare::Fraction(f) => f * self.params,
            MlpShare::Count(n) => n,
            MlpShare::Architecture { layers, embed, hidden, matrices, dense_layers } => {
                (layers.saturating_sub(dense_layers) * matrices * embed * hidden) as f64
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.params > 0.0) || !self.params.is_finite() {
            return bad(format!("params = {} must be positive", self.params));
        }
        if !(self.bytes_per_param > 0.0) {
            return bad(format!("bytes_per_param = {} must be positive", self.bytes_per_param));
        }
        if !(self.hbm_bytes > 0.0) {
            return bad(format!("hbm_bytes = {} must be positive", self.hbm_bytes));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return bad(format!("sparsity = {} must lie in [0, 1]", self.sparsity));
        }
        if let MlpShare::Fraction(f) = self.mlp {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("MLP fraction {f} must lie in [0, 1]"));
            }
        }
        if let MlpShare::Architecture { layers, dense_layers, .. } = self.mlp {
            if dense_layers > layers {
                return bad(format!("{dense_layers} dense layers out of {layers}"));
            }
        }
        let mlp = self.mlp_params();
        if !(mlp >= 0.0) || mlp > self.params {
            return bad(format!("MLP params {mlp} must lie in [0, params = {}]", self.params));
        }
        Ok(())
    }
}

pub fn gpu_calc(q: &FootprintQuery) -> Result<FootprintReport> {
    q.validate()?;
    let mlp_params = q.mlp_params();
    let dense_bytes = q.params * q.bytes_per_param;
    let sparse_bytes = (q.params - mlp_params * q.sparsity) * q.bytes_per_param;
    let gpus = |bytes: f64| ((bytes / q.hbm_bytes).ceil() as u64).max(1);
    let dense_gpus = gpus(dense_bytes);
    let sparse_gpus = gpus(sparse_bytes);
    Ok(FootprintReport {
        mlp_params,
        dense_bytes,
        sparse_bytes,
        dense_gpus,
        sparse_gpus,
        reduction: dense_gpus as f64 / sparse_gpus as f64,
    })
}
