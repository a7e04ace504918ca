//! Parameter groups: freeze flags, learning-rate multipliers and weight
//! decay per group of tensors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::head::{ParamTensor, PoolingHead};
use crate::error::{Error, Result};
use crate::pooling::PoolingMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub tensors: Vec<ParamTensor>,
    pub trainable: bool,
    pub lr_multiplier: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroupPlan {
    pub groups: Vec<ParamGroup>,
}

impl ParamGroupPlan {
    /// Standard grouping. Bias-like tensors share `weight_decay_bias`; the
    /// log-temperature is never decayed. Attention is frozen in mean mode.
    pub fn standard(mode: PoolingMode, weight_decay: f64, weight_decay_bias: f64) -> Self {
        let group = |name: &str, tensors: Vec<ParamTensor>, wd: f64| ParamGroup {
            name: name.to_string(),
            tensors,
            trainable: true,
            lr_multiplier: 1.0,
            weight_decay: wd,
        };
        let mut attention = group("attention", vec![ParamTensor::AttentionW], weight_decay);
        attention.trainable = mode == PoolingMode::Attn;
        Self {
            groups: vec![
                attention,
                group("neck", vec![ParamTensor::NeckScale], weight_decay),
                group("classifier", vec![ParamTensor::ClassifierWeight], weight_decay),
                group(
                    "bias",
                    vec![ParamTensor::ClassifierBias, ParamTensor::NeckShift],
                    weight_decay_bias,
                ),
                group("identity_memory", vec![ParamTensor::IdentityMemory], weight_decay),
                group("temperature", vec![ParamTensor::LogTemperature], 0.0),
            ],
        }
    }

    pub fn with_overrides(mut self, multipliers: &BTreeMap<String, f64>, frozen: &[String]) -> Result<Self> {
        for (name, &mult) in multipliers {
            self.group_mut(name)?.lr_multiplier = mult;
        }
        for name in frozen {
            self.group_mut(name)?.trainable = false;
        }
        Ok(self)
    }

    fn group_mut(&mut self, name: &str) -> Result<&mut ParamGroup> {
        self.groups
            .iter_mut()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter group {name:?}")))
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Every tensor the head carries belongs to exactly one group, and all
    /// multipliers are finite and non-negative.
    pub fn validate(&self, head: &PoolingHead) -> Result<()> {
        for g in &self.groups {
            if !g.lr_multiplier.is_finite() || g.lr_multiplier < 0.0 {
                return Err(Error::Config(format!(
                    "group {} has multiplier {}",
                    g.name, g.lr_multiplier
                )));
            }
            if !g.weight_decay.is_finite() || g.weight_decay < 0.0 {
                return Err(Error::Config(format!(
                    "group {} has weight decay {}",
                    g.name, g.weight_decay
                )));
            }
        }
        for t in head.tensors() {
            let owners = self.groups.iter().filter(|g| g.tensors.contains(&t)).count();
            if owners != 1 {
                return Err(Error::Config(format!("tensor {} is in {owners} groups", t.name())));
            }
        }
        Ok(())
    }
}
