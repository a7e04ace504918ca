use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::datamodel::FrameFeatureSequence;
use crate::error::{Error, Result};

/// Learnable projection producing one attention score per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPoolParams {
    pub w: Array1<f64>,
    pub trainable: bool,
}

impl AttentionPoolParams {
    /// All-zero projection; pools exactly like the mean.
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            w: Array1::zeros(feature_dim),
            trainable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding {
    pub z: Array1<f64>,
    pub alphas: Array1<f64>,
    pub tracklet_index: usize,
}

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    tracklet_index: usize,
    w: Array1<f64>,
    pub scores: Array1<f64>,
    pub alphas: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub grad_w: Array1<f64>,
    pub grad_frames: Array2<f64>,
}

fn weighted_sum(seq: &FrameFeatureSequence, weights: &Array1<f64>) -> Array1<f64> {
    let mut z = Array1::zeros(seq.feature_dim());
    for (frame, &a) in seq.frames.axis_iter(Axis(0)).zip(weights) {
        z.scaled_add(a, &frame);
    }
    z
}

pub fn mean_pool(seq: &FrameFeatureSequence) -> PooledEmbedding {
    let t = seq.seq_len();
    let alphas = Array1::from_elem(t, 1.0 / t as f64);
    PooledEmbedding {
        z: weighted_sum(seq, &alphas),
        alphas,
        tracklet_index: seq.tracklet_index,
    }
}

pub fn attention_scores(seq: &FrameFeatureSequence, params: &AttentionPoolParams) -> Result<Array1<f64>> {
    if params.w.len() != seq.feature_dim() {
        return Err(Error::DimMismatch {
            expected: seq.feature_dim(),
            got: params.w.len(),
        });
    }
    Ok(seq.frames.dot(&params.w))
}

/// Max-shifted softmax over the temporal axis.
pub fn attention_weights(scores: ArrayView1<f64>) -> Array1<f64> {
    let max = scores.fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let exp = scores.mapv(|s| (s - max).exp());
    let sum = exp.sum();
    exp.mapv(|e| e / sum)
}

pub fn attention_pool(seq: &FrameFeatureSequence, params: &AttentionPoolParams) -> Result<PooledEmbedding> {
    attention_pool_forward(seq, params).map(|(pooled, _)| pooled)
}

pub fn attention_pool_forward(
    seq: &FrameFeatureSequence,
    params: &AttentionPoolParams,
) -> Result<(PooledEmbedding, AttentionCache)> {
    let scores = attention_scores(seq, params)?;
    let alphas = attention_weights(scores.view());
    let pooled = PooledEmbedding {
        z: weighted_sum(seq, &alphas),
        alphas: alphas.clone(),
        tracklet_index: seq.tracklet_index,
    };
    let cache = AttentionCache {
        tracklet_index: seq.tracklet_index,
        w: params.w.clone(),
        scores,
        alphas,
    };
    Ok((pooled, cache))
}

/// Chain rule through `z = Σ α_t f_t`, `α = softmax(s)`, `s_t = w·f_t`.
pub fn attention_pool_backward(
    seq: &FrameFeatureSequence,
    params: &AttentionPoolParams,
    cache: &AttentionCache,
    grad_z: ArrayView1<f64>,
) -> Result<AttentionGrads> {
    if cache.tracklet_index != seq.tracklet_index || cache.alphas.len() != seq.seq_len() || cache.w != params.w {
        return Err(Error::StaleCache);
    }
    if grad_z.len() != seq.feature_dim() {
        return Err(Error::DimMismatch {
            expected: seq.feature_dim(),
            got: grad_z.len(),
        });
    }
    let alphas = &cache.alphas;
    let g = seq.frames.dot(&grad_z);
    let g_bar = alphas.dot(&g);
    let grad_scores = alphas * &g.mapv(|v| v - g_bar);

    let grad_w = seq.frames.t().dot(&grad_scores);
    let mut grad_frames = Array2::zeros(seq.frames.dim());
    for (t, mut row) in grad_frames.axis_iter_mut(Axis(0)).enumerate() {
        row.scaled_add(alphas[t], &grad_z);
        row.scaled_add(grad_scores[t], &params.w);
    }
    Ok(AttentionGrads { grad_w, grad_frames })
}
