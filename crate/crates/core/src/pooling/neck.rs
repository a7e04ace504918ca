use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample instance normalization across channels, with optional affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckParams {
    pub enabled: bool,
    pub eps: f64,
    pub scale: Option<Array1<f64>>,
    pub shift: Option<Array1<f64>>,
}

impl NeckParams {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            eps: 1e-5,
            scale: None,
            shift: None,
        }
    }

    /// Enabled with identity affine (scale 1, shift 0).
    pub fn with_affine(feature_dim: usize) -> Self {
        Self {
            enabled: true,
            eps: 1e-5,
            scale: Some(Array1::ones(feature_dim)),
            shift: Some(Array1::zeros(feature_dim)),
        }
    }

    fn check(&self, c: usize) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "neck epsilon must be positive, got {}",
                self.eps
            )));
        }
        if c < 2 {
            return Err(Error::TooFewChannels(c));
        }
        for v in self.scale.iter().chain(self.shift.iter()) {
            if v.len() != c {
                return Err(Error::DimMismatch {
                    expected: c,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NeckCache {
    xhat: Array1<f64>,
    inv_std: f64,
}

#[derive(Debug, Clone)]
pub struct NeckGrads {
    pub grad_z: Array1<f64>,
    pub grad_scale: Option<Array1<f64>>,
    pub grad_shift: Option<Array1<f64>>,
}

pub fn instance_norm_neck(z: ArrayView1<f64>, neck: &NeckParams) -> Result<Array1<f64>> {
    neck_forward(z, neck).map(|(out, _)| out)
}

/// Returns `None` for the cache when the neck is disabled (identity).
pub fn neck_forward(z: ArrayView1<f64>, neck: &NeckParams) -> Result<(Array1<f64>, Option<NeckCache>)> {
    if !neck.enabled {
        return Ok((z.to_owned(), None));
    }
    let c = z.len();
    neck.check(c)?;
    let mean = z.sum() / c as f64;
    let var = z.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / c as f64;
    let inv_std = 1.0 / (var + neck.eps).sqrt();
    let xhat = z.mapv(|v| (v - mean) * inv_std);
    let mut out = xhat.clone();
    if let Some(scale) = &neck.scale {
        out *= scale;
    }
    if let Some(shift) = &neck.shift {
        out += shift;
    }
    Ok((out, Some(NeckCache { xhat, inv_std })))
}

pub fn neck_backward(neck: &NeckParams, cache: Option<&NeckCache>, grad_out: ArrayView1<f64>) -> NeckGrads {
    let Some(cache) = cache else {
        return NeckGrads {
            grad_z: grad_out.to_owned(),
            grad_scale: None,
            grad_shift: None,
        };
    };
    let c = grad_out.len() as f64;
    let grad_scale = neck.scale.as_ref().map(|_| &grad_out * &cache.xhat);
    let grad_shift = neck.shift.as_ref().map(|_| grad_out.to_owned());
    let grad_xhat = match &neck.scale {
        Some(scale) => &grad_out * scale,
        None => grad_out.to_owned(),
    };
    let mean_g = grad_xhat.sum() / c;
    let mean_gx = grad_xhat.dot(&cache.xhat) / c;
    let grad_z = (&grad_xhat - mean_g - &cache.xhat.mapv(|x| x * mean_gx)) * cache.inv_std;
    NeckGrads {
        grad_z,
        grad_scale,
        grad_shift,
    }
}
