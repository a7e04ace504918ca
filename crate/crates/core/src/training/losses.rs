//! Loss terms of the training objective and their gradients.
//!
//! Every term takes the batch of neck outputs `x` (B×C) and integer class
//! labels, and returns the scalar loss together with `∂L/∂x` and the
//! gradients of whatever parameters it owns.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::l2_normalize_backward;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_id: f64,
    pub lambda_tri: f64,
    pub lambda_i2t: f64,
    pub lambda_t2i: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_id: 0.25,
            lambda_tri: 1.0,
            lambda_i2t: 1.0,
            lambda_t2i: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_id, self.lambda_tri, self.lambda_i2t, self.lambda_t2i];
        if all.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lambda_id: self.lambda_id * factor,
            lambda_tri: self.lambda_tri * factor,
            lambda_i2t: self.lambda_i2t * factor,
            lambda_t2i: self.lambda_t2i * factor,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IdLossOutput {
    pub loss: f64,
    pub grad_x: Array2<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
}

fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.fold(0.0, |acc, &v| acc + (v - max).exp()).ln();
    logits.mapv(|v| v - lse)
}

fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= num_classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, num_classes }),
        None => Ok(()),
    }
}

fn check_batch(x: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if x.nrows() != labels.len() {
        return Err(Error::DimMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    Ok(())
}

/// Mean label-smoothed cross-entropy of `x Wᵀ + b`.
pub fn id_loss(
    x: ArrayView2<f64>,
    labels: &[usize],
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    smoothing: f64,
) -> Result<IdLossOutput> {
    check_batch(x, labels)?;
    let k = weight.nrows();
    check_labels(labels, k)?;
    if weight.ncols() != x.ncols() {
        return Err(Error::DimMismatch {
            expected: x.ncols(),
            got: weight.ncols(),
        });
    }
    let b = x.nrows() as f64;
    let logits = x.dot(&weight.t()) + bias;
    let mut grad_logits = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let logp = log_softmax(row);
        for c in 0..k {
            let target = smoothing / k as f64 + if c == labels[i] { 1.0 - smoothing } else { 0.0 };
            loss -= target * logp[c];
            grad_logits[[i, c]] = (logp[c].exp() - target) / b;
        }
    }
    Ok(IdLossOutput {
        loss: loss / b,
        grad_x: grad_logits.dot(&weight),
        grad_weight: grad_logits.t().dot(&x),
        grad_bias: grad_logits.sum_axis(Axis(0)),
    })
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_x: Array2<f64>,
}

/// Rows of `x` divided by their norms, plus the norms.
fn normalize_rows(x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::ZeroVector);
    }
    let y = &x / &norms.view().insert_axis(Axis(1));
    Ok((y, norms))
}

fn normalize_rows_backward(y: &Array2<f64>, norms: &Array1<f64>, grad_y: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(y.dim());
    for i in 0..y.nrows() {
        out.row_mut(i)
            .assign(&l2_normalize_backward(y.row(i), norms[i], grad_y.row(i)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "margin")]
#[derive(Default)]
pub enum TripletMargin {
    /// softplus(d_p − d_n)
    #[default]
    Soft,
    /// max(0, m + d_p − d_n)
    Hinge(f64),
}

/// Hardest positive and hardest negative of `anchor`, first index on ties.
pub(crate) fn hardest_pair(dist: &Array2<f64>, labels: &[usize], anchor: usize) -> Option<(usize, usize)> {
    let mut pos: Option<usize> = None;
    let mut neg: Option<usize> = None;
    for j in 0..labels.len() {
        if j == anchor {
            continue;
        }
        let d = dist[[anchor, j]];
        if labels[j] == labels[anchor] {
            if pos.is_none_or(|p| d > dist[[anchor, p]]) {
                pos = Some(j);
            }
        } else if neg.is_none_or(|n| d < dist[[anchor, n]]) {
            neg = Some(j);
        }
    }
    Some((pos?, neg?))
}

const DIST_FLOOR: f64 = 1e-12;

/// Batch-hard triplet loss over Euclidean distances of ℓ2-normalized rows.
pub fn triplet_loss(x: ArrayView2<f64>, labels: &[usize], margin: TripletMargin) -> Result<LossOutput> {
    check_batch(x, labels)?;
    let (y, norms) = normalize_rows(x)?;
    let n = y.nrows();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &y.row(i) - &y.row(j);
            let d = diff.dot(&diff).sqrt();
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }

    let triplets: Vec<(usize, usize, usize)> = (0..n)
        .filter_map(|a| hardest_pair(&dist, labels, a).map(|(p, q)| (a, p, q)))
        .collect();
    if triplets.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let count = triplets.len() as f64;

    let mut loss = 0.0;
    let mut grad_y = Array2::zeros(y.dim());
    // ∂d(a,b)/∂y_a = (y_a − y_b) / d
    let push = |grad_y: &mut Array2<f64>, a: usize, b: usize, coeff: f64| {
        let d = dist[[a, b]];
        if d > DIST_FLOOR {
            let dir = (&y.row(a) - &y.row(b)) * (coeff / d);
            grad_y.row_mut(a).scaled_add(1.0, &dir);
            grad_y.row_mut(b).scaled_add(-1.0, &dir);
        }
    };
    for &(a, p, q) in &triplets {
        let u = dist[[a, p]] - dist[[a, q]];
        let (term, slope) = match margin {
            TripletMargin::Soft => (softplus(u), sigmoid(u)),
            TripletMargin::Hinge(m) => {
                let h = m + u;
                if h > 0.0 {
                    (h, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        };
        loss += term;
        let c = slope / count;
        if c != 0.0 {
            push(&mut grad_y, a, p, c);
            push(&mut grad_y, a, q, -c);
        }
    }
    Ok(LossOutput {
        loss: loss / count,
        grad_x: normalize_rows_backward(&y, &norms, &grad_y),
    })
}

pub(crate) fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct CrossModalTerm {
    pub loss: f64,
    pub grad_x: Array2<f64>,
    pub grad_memory: Array2<f64>,
    pub grad_log_temperature: f64,
}

#[derive(Debug, Clone)]
pub struct CrossModalOutput {
    pub i2t: CrossModalTerm,
    pub t2i: CrossModalTerm,
}

/// Symmetric temperature-scaled InfoNCE between batch embeddings and the
/// identity memory table. Both sides are ℓ2-normalized on the fly.
///
/// `i2t`: each embedding against every memory row. `t2i`: each distinct
/// batch identity's memory row against the batch, with all same-label
/// embeddings counted as positives.
pub fn cross_modal_losses(
    x: ArrayView2<f64>,
    labels: &[usize],
    memory: ArrayView2<f64>,
    log_temperature: f64,
) -> Result<CrossModalOutput> {
    check_batch(x, labels)?;
    check_labels(labels, memory.nrows())?;
    if memory.ncols() != x.ncols() {
        return Err(Error::DimMismatch {
            expected: x.ncols(),
            got: memory.ncols(),
        });
    }
    let (y, y_norms) = normalize_rows(x)?;
    let (m, m_norms) = normalize_rows(memory)?;
    let inv_tau = (-log_temperature).exp();
    let logits = y.dot(&m.t()) * inv_tau;
    let b = y.nrows();

    let mut i2t_loss = 0.0;
    let mut i2t_grad = Array2::zeros(logits.dim());
    for i in 0..b {
        let logp = log_softmax(logits.row(i));
        i2t_loss -= logp[labels[i]];
        for k in 0..logits.ncols() {
            let target = if k == labels[i] { 1.0 } else { 0.0 };
            i2t_grad[[i, k]] = (logp[k].exp() - target) / b as f64;
        }
    }
    i2t_loss /= b as f64;

    let identities: BTreeSet<usize> = labels.iter().copied().collect();
    let j_count = identities.len() as f64;
    let mut t2i_loss = 0.0;
    let mut t2i_grad = Array2::zeros(logits.dim());
    for &j in &identities {
        let col = logits.column(j);
        let lse_all = log_sum_exp(col.iter().copied());
        let lse_pos = log_sum_exp((0..b).filter(|&i| labels[i] == j).map(|i| col[i]));
        t2i_loss -= lse_pos - lse_all;
        for i in 0..b {
            let p = (col[i] - lse_all).exp();
            let q = if labels[i] == j { (col[i] - lse_pos).exp() } else { 0.0 };
            t2i_grad[[i, j]] = (p - q) / j_count;
        }
    }
    t2i_loss /= j_count;

    let backprop = |loss: f64, grad_logits: Array2<f64>| -> CrossModalTerm {
        let grad_y = grad_logits.dot(&m) * inv_tau;
        let grad_m = grad_logits.t().dot(&y) * inv_tau;
        let grad_log_temperature = -(&grad_logits * &logits).sum();
        CrossModalTerm {
            loss,
            grad_x: normalize_rows_backward(&y, &y_norms, &grad_y),
            grad_memory: normalize_rows_backward(&m, &m_norms, &grad_m),
            grad_log_temperature,
        }
    };
    Ok(CrossModalOutput {
        i2t: backprop(i2t_loss, i2t_grad),
        t2i: backprop(t2i_loss, t2i_grad),
    })
}
