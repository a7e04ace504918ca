//! Frame-sequence aggregation.
//!
//! The inference pipeline is fixed: pool → instance-norm neck → flip
//! averaging → ℓ2 normalization.

mod attention;
mod neck;

pub use attention::{
    attention_pool, attention_pool_backward, attention_pool_forward, attention_scores, attention_weights, mean_pool,
    AttentionCache, AttentionGrads, AttentionPoolParams, PooledEmbedding,
};
pub use neck::{instance_norm_neck, neck_backward, neck_forward, NeckCache, NeckGrads, NeckParams};

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::datamodel::FrameFeatureSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Mean,
    #[serde(alias = "attention")]
    Attn,
}

impl PoolingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolingMode::Mean => "mean",
            PoolingMode::Attn => "attn",
        }
    }
}

impl std::str::FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(PoolingMode::Mean),
            "attn" | "attention" => Ok(PoolingMode::Attn),
            other => Err(Error::Config(format!("unknown pooling mode {other:?}"))),
        }
    }
}

pub fn l2_normalize(z: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = z.dot(&z).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(z.mapv(|v| v / norm))
}

/// Gradient of `y = x / ‖x‖` given `y`, `‖x‖` and `∂L/∂y`.
pub(crate) fn l2_normalize_backward(y: ArrayView1<f64>, norm: f64, grad_y: ArrayView1<f64>) -> Array1<f64> {
    let proj = y.dot(&grad_y);
    (&grad_y - &y.mapv(|v| v * proj)) / norm
}

pub fn flip_average(z_orig: ArrayView1<f64>, z_flip: ArrayView1<f64>) -> Result<Array1<f64>> {
    if z_orig.len() != z_flip.len() {
        return Err(Error::DimMismatch {
            expected: z_orig.len(),
            got: z_flip.len(),
        });
    }
    Ok((&z_orig + &z_flip) * 0.5)
}

pub fn pool(seq: &FrameFeatureSequence, mode: PoolingMode, attention: &AttentionPoolParams) -> Result<PooledEmbedding> {
    match mode {
        PoolingMode::Mean => Ok(mean_pool(seq)),
        PoolingMode::Attn => attention_pool(seq, attention),
    }
}

/// Retrieval embedding for one tracklet, optionally averaged with its
/// flipped counterpart.
pub fn embed_tracklet(
    seq: &FrameFeatureSequence,
    flipped: Option<&FrameFeatureSequence>,
    mode: PoolingMode,
    attention: &AttentionPoolParams,
    neck: &NeckParams,
) -> Result<Array1<f64>> {
    let orig = instance_norm_neck(pool(seq, mode, attention)?.z.view(), neck)?;
    let combined = match flipped {
        Some(f) => {
            let flip = instance_norm_neck(pool(f, mode, attention)?.z.view(), neck)?;
            flip_average(orig.view(), flip.view())?
        }
        None => orig,
    };
    l2_normalize(combined.view())
}
