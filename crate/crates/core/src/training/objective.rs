use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::head::{HeadGrads, PoolingHead};
use super::losses::{cross_modal_losses, id_loss, triplet_loss, LossWeights, TripletMargin};
use crate::datamodel::FrameFeatureSequence;
use crate::error::{Error, Result};
use crate::pooling::{
    attention_pool_backward, attention_pool_forward, mean_pool, neck_backward, neck_forward, AttentionCache, NeckCache,
    PoolingMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub label_smoothing: f64,
    pub triplet: TripletMargin,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            label_smoothing: 0.1,
            triplet: TripletMargin::Soft,
        }
    }
}

/// Unweighted term values plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub id: f64,
    pub tri: f64,
    pub i2t: f64,
    pub t2i: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn accumulate(&mut self, other: &LossBreakdown) {
        self.id += other.id;
        self.tri += other.tri;
        self.i2t += other.i2t;
        self.t2i += other.t2i;
        self.total += other.total;
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.id *= factor;
        self.tri *= factor;
        self.i2t *= factor;
        self.t2i *= factor;
        self.total *= factor;
    }
}

/// Weighted multi-term loss on one batch and the gradient of every
/// trainable tensor. Terms whose weight is zero are not evaluated.
pub fn total_loss(
    batch: &[&FrameFeatureSequence],
    labels: &[usize],
    head: &PoolingHead,
    config: &LossConfig,
) -> Result<(LossBreakdown, HeadGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: batch.len(),
            got: labels.len(),
        });
    }
    let weights = &config.weights;
    weights.validate()?;
    let c = head.feature_dim();

    let mut attention_caches: Vec<Option<AttentionCache>> = Vec::with_capacity(batch.len());
    let mut neck_caches: Vec<Option<NeckCache>> = Vec::with_capacity(batch.len());
    let mut x = Array2::zeros((batch.len(), c));
    for (i, seq) in batch.iter().enumerate() {
        if seq.feature_dim() != c {
            return Err(Error::DimMismatch {
                expected: c,
                got: seq.feature_dim(),
            });
        }
        let (pooled, cache) = match head.mode {
            PoolingMode::Mean => (mean_pool(seq), None),
            PoolingMode::Attn => {
                let (p, cache) = attention_pool_forward(seq, &head.attention)?;
                (p, Some(cache))
            }
        };
        let (out, neck_cache) = neck_forward(pooled.z.view(), &head.neck)?;
        x.row_mut(i).assign(&out);
        attention_caches.push(cache);
        neck_caches.push(neck_cache);
    }

    let mut grads = HeadGrads::zeros_like(head);
    let mut grad_x = Array2::zeros(x.dim());
    let mut losses = LossBreakdown::default();

    if weights.lambda_id > 0.0 {
        let out = id_loss(
            x.view(),
            labels,
            head.classifier_weight.view(),
            head.classifier_bias.view(),
            config.label_smoothing,
        )?;
        losses.id = out.loss;
        grad_x.scaled_add(weights.lambda_id, &out.grad_x);
        grads.classifier_weight.scaled_add(weights.lambda_id, &out.grad_weight);
        grads.classifier_bias.scaled_add(weights.lambda_id, &out.grad_bias);
    }
    if weights.lambda_tri > 0.0 {
        let out = triplet_loss(x.view(), labels, config.triplet)?;
        losses.tri = out.loss;
        grad_x.scaled_add(weights.lambda_tri, &out.grad_x);
    }
    if weights.lambda_i2t > 0.0 || weights.lambda_t2i > 0.0 {
        let out = cross_modal_losses(x.view(), labels, head.identity_memory.view(), head.log_temperature)?;
        for (lambda, term, slot) in [
            (weights.lambda_i2t, &out.i2t, &mut losses.i2t),
            (weights.lambda_t2i, &out.t2i, &mut losses.t2i),
        ] {
            if lambda > 0.0 {
                *slot = term.loss;
                grad_x.scaled_add(lambda, &term.grad_x);
                grads.identity_memory.scaled_add(lambda, &term.grad_memory);
                grads.log_temperature += lambda * term.grad_log_temperature;
            }
        }
    }
    losses.total = weights.lambda_id * losses.id
        + weights.lambda_tri * losses.tri
        + weights.lambda_i2t * losses.i2t
        + weights.lambda_t2i * losses.t2i;

    for (i, seq) in batch.iter().enumerate() {
        let neck = neck_backward(&head.neck, neck_caches[i].as_ref(), grad_x.row(i));
        if let (Some(acc), Some(g)) = (grads.neck_scale.as_mut(), neck.grad_scale.as_ref()) {
            *acc += g;
        }
        if let (Some(acc), Some(g)) = (grads.neck_shift.as_mut(), neck.grad_shift.as_ref()) {
            *acc += g;
        }
        if let Some(cache) = &attention_caches[i] {
            let g = attention_pool_backward(seq, &head.attention, cache, neck.grad_z.view())?;
            grads.attention_w += &g.grad_w;
        }
    }
    Ok((losses, grads))
}

/// Neck outputs for a batch, as fed to the loss terms.
pub fn batch_features(batch: &[&FrameFeatureSequence], head: &PoolingHead) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((batch.len(), head.feature_dim()));
    for (mut row, seq) in x.axis_iter_mut(Axis(0)).zip(batch) {
        let pooled = crate::pooling::pool(seq, head.mode, &head.attention)?;
        row.assign(&crate::pooling::instance_norm_neck(pooled.z.view(), &head.neck)?);
    }
    Ok(x)
}
