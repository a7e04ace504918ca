//! Adaptive moment estimation with bias correction. Weight decay is the
//! classic L2 form folded into the gradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::head::{HeadGrads, ParamTensor, PoolingHead};
use super::plan::ParamGroupPlan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// One update of `param` in place. `step` is the 1-based step count.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    moments: &mut Moments,
    step: u64,
    lr: f64,
    weight_decay: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != param.len() || moments.first.len() != param.len() || moments.second.len() != param.len() {
        return Err(Error::ShapeMismatch(format!(
            "parameter has {} entries, gradient {}",
            param.len(),
            grad.len()
        )));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i] + weight_decay * param[i];
        let m = &mut moments.first[i];
        let v = &mut moments.second[i];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<ParamTensor, Moments>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Updates every tensor of every trainable group with `lr × multiplier`.
    /// Frozen groups are skipped entirely, moments included.
    pub fn step(&mut self, head: &mut PoolingHead, grads: &HeadGrads, plan: &ParamGroupPlan, lr: f64) -> Result<()> {
        self.step += 1;
        for group in plan.groups.iter().filter(|g| g.trainable) {
            let group_lr = lr * group.lr_multiplier;
            for &t in &group.tensors {
                let (Some(param), Some(grad)) = (head.tensor_mut(t), grads.tensor(t)) else {
                    continue;
                };
                let moments = self.moments.entry(t).or_insert_with(|| Moments {
                    first: vec![0.0; param.len()],
                    second: vec![0.0; param.len()],
                });
                adam_update(
                    param,
                    grad,
                    moments,
                    self.step,
                    group_lr,
                    group.weight_decay,
                    &self.config,
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh(n: usize) -> Moments {
        Moments {
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    #[test]
    fn zero_gradient_is_null_update() {
        let mut p = vec![1.5, -2.0];
        let mut m = Moments {
            first: vec![0.5, -0.5],
            second: vec![0.2, 0.1],
        };
        adam_update(&mut p, &[0.0, 0.0], &mut m, 3, 0.1, 0.0, &AdamConfig::default()).unwrap();
        assert_eq!(
            p[0],
            1.5 - 0.1 * (0.45 / (1.0 - 0.9f64.powi(3))) / ((0.2 * 0.999 / (1.0 - 0.999f64.powi(3))).sqrt() + 1e-8)
        );
        assert_eq!(m.first, vec![0.45, -0.45]);
        let mut q = vec![1.5];
        let mut z = fresh(1);
        adam_update(&mut q, &[0.0], &mut z, 1, 0.1, 0.0, &AdamConfig::default()).unwrap();
        assert_eq!(q, vec![1.5]);
        assert_eq!(z, fresh(1));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut m = fresh(1);
        adam_update(&mut p, &[1.0], &mut m, 1, 0.1, 0.0, &AdamConfig::default()).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −0.1 / (1 + 1e-8)
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_decreases() {
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        let mut p = vec![-1.0];
        let mut m = fresh(1);
        let mut prev = f(p[0]);
        for step in 1..=10 {
            let g = 2.0 * (p[0] - 3.0);
            adam_update(&mut p, &[g], &mut m, step, 0.1, 0.0, &AdamConfig::default()).unwrap();
            let now = f(p[0]);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0, 1.0];
        assert!(matches!(
            adam_update(&mut p, &[1.0], &mut fresh(2), 1, 0.1, 0.0, &AdamConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
