//! Epoch-level learning-rate schedules: linear warm-up followed by cosine
//! annealing, or step decay at fixed milestones.

use serde::{Deserialize, Serialize};

use super::plan::ParamGroup;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[serde(alias = "1")]
    Stage1,
    #[serde(alias = "2")]
    Stage2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrPolicy {
    Cosine,
    MultiStep { milestones: Vec<usize>, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub warmup_start_factor: f64,
    pub max_epochs: usize,
    pub stage: Stage,
    pub policy: LrPolicy,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.base_lr) {
            return Err(Error::Config(format!(
                "need 0 < min_lr <= base_lr, got {} and {}",
                self.min_lr, self.base_lr
            )));
        }
        if !(self.warmup_start_factor > 0.0 && self.warmup_start_factor <= 1.0) {
            return Err(Error::Config(format!(
                "warmup_start_factor must be in (0, 1], got {}",
                self.warmup_start_factor
            )));
        }
        if self.max_epochs > 0 && self.warmup_epochs >= self.max_epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} must be below max_epochs {}",
                self.warmup_epochs, self.max_epochs
            )));
        }
        Ok(())
    }

    fn warmup_lr(&self, epoch: f64) -> f64 {
        let f = self.warmup_start_factor;
        self.base_lr * (f + (1.0 - f) * epoch / self.warmup_epochs as f64)
    }

    fn cosine_lr(&self, epoch: f64) -> f64 {
        let span = self.max_epochs as f64 - 1.0 - self.warmup_epochs as f64;
        if span <= 0.0 {
            return self.base_lr;
        }
        let progress = (epoch - self.warmup_epochs as f64) / span;
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

pub fn lr_at(epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if epoch >= cfg.max_epochs {
        return Err(Error::EpochOutOfRange {
            epoch,
            max_epochs: cfg.max_epochs,
        });
    }
    if epoch < cfg.warmup_epochs {
        return Ok(cfg.warmup_lr(epoch as f64));
    }
    Ok(match &cfg.policy {
        LrPolicy::Cosine => cfg.cosine_lr(epoch as f64),
        LrPolicy::MultiStep { milestones, gamma } => {
            let passed = milestones.iter().filter(|&&m| epoch >= m).count();
            cfg.base_lr * gamma.powi(passed as i32)
        }
    })
}

pub fn effective_lr(group: &ParamGroup, epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if !group.trainable {
        return Err(Error::FrozenGroup(group.name.clone()));
    }
    Ok(lr_at(epoch, cfg)? * group.lr_multiplier)
}
