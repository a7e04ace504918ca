use std::collections::BTreeMap;

use log::info;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::PoolingHead;
use super::losses::{LossWeights, TripletMargin};
use super::objective::{batch_features, total_loss, LossBreakdown, LossConfig};
use super::optim::{AdamConfig, OptimizerState};
use super::plan::ParamGroupPlan;
use super::sampler::PkSampler;
use super::schedule::{lr_at, LrPolicy, ScheduleConfig, Stage};
use crate::datamodel::{Dataset, FrameFeatureSequence, Split};
use crate::error::{Error, Result};
use crate::pooling::PoolingMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Refined configuration (default).
    Ours,
    /// Original baseline configuration.
    Baseline,
}

/// Starting point of the identity memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryInit {
    /// Gaussian rows.
    Random,
    /// Normalized class means of the initial training embeddings.
    #[default]
    Prototype,
}

/// Resolved training configuration. Key names follow the usual trainer
/// vocabulary (`base_lr`, `max_epochs`, `batch`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub stage: Stage,
    pub optimizer: String,
    pub base_lr: f64,
    /// Defaults to 1% of `base_lr`.
    pub min_lr: Option<f64>,
    /// Defaults to 10% of `max_epochs`.
    pub warmup_epochs: Option<usize>,
    pub warmup_start_factor: f64,
    pub max_epochs: usize,
    pub schedule: LrPolicy,
    /// Tracklets per batch (P×K).
    pub batch: usize,
    /// K: tracklets per identity in a batch.
    pub instances_per_id: usize,
    pub weight_decay: f64,
    pub weight_decay_bias: f64,
    pub lambda_id: f64,
    pub lambda_tri: f64,
    pub lambda_i2t: f64,
    pub lambda_t2i: f64,
    pub label_smoothing: f64,
    pub triplet: TripletMargin,
    pub pooling: PoolingMode,
    pub instance_norm: bool,
    pub temperature: f64,
    #[serde(default)]
    pub memory_init: MemoryInit,
    pub lr_multipliers: BTreeMap<String, f64>,
    pub frozen: Vec<String>,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn preset(preset: Preset, stage: Stage) -> Self {
        let (base_lr, max_epochs, batch, weight_decay, schedule) = match (preset, stage) {
            (Preset::Ours, Stage::Stage1) => (2.0e-4, 50, 48, 1e-4, LrPolicy::Cosine),
            (Preset::Ours, Stage::Stage2) => (1.0e-4, 40, 24, 2.5e-4, LrPolicy::Cosine),
            (Preset::Baseline, Stage::Stage1) => (3.5e-4, 120, 16, 1e-4, LrPolicy::Cosine),
            (Preset::Baseline, Stage::Stage2) => (
                1.0e-4,
                120,
                16,
                2.5e-4,
                LrPolicy::MultiStep {
                    milestones: vec![60, 90],
                    gamma: 0.1,
                },
            ),
        };
        let weights = LossWeights::default();
        Self {
            preset,
            stage,
            optimizer: "adam".to_string(),
            base_lr,
            min_lr: None,
            warmup_epochs: None,
            warmup_start_factor: 0.1,
            max_epochs,
            schedule,
            batch,
            instances_per_id: 4,
            weight_decay,
            weight_decay_bias: 1e-4,
            lambda_id: weights.lambda_id,
            lambda_tri: weights.lambda_tri,
            lambda_i2t: weights.lambda_i2t,
            lambda_t2i: weights.lambda_t2i,
            label_smoothing: 0.1,
            triplet: TripletMargin::Soft,
            pooling: match preset {
                Preset::Ours => PoolingMode::Attn,
                Preset::Baseline => PoolingMode::Mean,
            },
            instance_norm: preset == Preset::Ours,
            temperature: 0.07,
            memory_init: MemoryInit::Prototype,
            lr_multipliers: BTreeMap::new(),
            frozen: Vec::new(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }

    /// Preset for `stage` with the keys of `overrides` (a JSON object)
    /// merged on top. `preset` and `stage` keys in the object select the
    /// base preset.
    pub fn from_json_overrides(stage: Stage, overrides: &serde_json::Value) -> Result<Self> {
        let obj = match overrides {
            serde_json::Value::Null => return Ok(Self::preset(Preset::Ours, stage)),
            serde_json::Value::Object(map) => map,
            _ => return Err(Error::Config("training config must be a JSON object".into())),
        };
        let preset = match obj.get("preset") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => Preset::Ours,
        };
        let mut base = serde_json::to_value(Self::preset(preset, stage))?;
        let target = base.as_object_mut().expect("struct serializes to an object");
        for (k, v) in obj {
            if k == "stage" {
                continue;
            }
            if !target.contains_key(k) {
                return Err(Error::Config(format!("unknown training config key {k:?}")));
            }
            target.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn min_lr(&self) -> f64 {
        self.min_lr.unwrap_or(0.01 * self.base_lr)
    }

    pub fn warmup_epochs(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.max_epochs / 10)
    }

    pub fn ids_per_batch(&self) -> usize {
        self.batch / self.instances_per_id
    }

    pub fn schedule_config(&self) -> ScheduleConfig {
        ScheduleConfig {
            base_lr: self.base_lr,
            min_lr: self.min_lr(),
            warmup_epochs: self.warmup_epochs(),
            warmup_start_factor: self.warmup_start_factor,
            max_epochs: self.max_epochs,
            stage: self.stage,
            policy: self.schedule.clone(),
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            weights: LossWeights {
                lambda_id: self.lambda_id,
                lambda_tri: self.lambda_tri,
                lambda_i2t: self.lambda_i2t,
                lambda_t2i: self.lambda_t2i,
            },
            label_smoothing: self.label_smoothing,
            triplet: self.triplet,
        }
    }

    pub fn plan(&self) -> Result<ParamGroupPlan> {
        ParamGroupPlan::standard(self.pooling, self.weight_decay, self.weight_decay_bias)
            .with_overrides(&self.lr_multipliers, &self.frozen)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.optimizer.eq_ignore_ascii_case("adam") {
            return Err(Error::Config(format!("unsupported optimizer {:?}", self.optimizer)));
        }
        if self.instances_per_id == 0 || self.batch == 0 || !self.batch.is_multiple_of(self.instances_per_id) {
            return Err(Error::Config(format!(
                "batch {} must be a positive multiple of instances_per_id {}",
                self.batch, self.instances_per_id
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing {} not in [0, 1)",
                self.label_smoothing
            )));
        }
        self.loss_config().weights.validate()?;
        self.schedule_config().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub batches: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: PoolingHead,
    pub history: Vec<EpochRecord>,
}

/// Sorted distinct training identities; the class index of a person is its
/// position here.
pub fn class_ids(dataset: &Dataset) -> Vec<u32> {
    let mut ids: Vec<u32> = dataset.split(Split::Train).map(|r| r.person_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

pub fn initial_head(dataset: &Dataset, config: &TrainConfig) -> Result<PoolingHead> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = PoolingHead::init(
        config.pooling,
        dataset.feature_dim,
        class_ids(dataset),
        config.instance_norm,
        config.temperature,
        &mut rng,
    )?;
    if config.memory_init == MemoryInit::Prototype {
        let mut sums = Array2::<f64>::zeros(head.identity_memory.dim());
        for r in dataset.split(Split::Train) {
            let class = head
                .class_person_ids
                .binary_search(&r.person_id)
                .expect("class ids cover the train split");
            let x = batch_features(&[dataset.sequence(r.tracklet_index)], &head)?;
            sums.row_mut(class).scaled_add(1.0, &x.row(0));
        }
        for (mut row, sum) in head.identity_memory.axis_iter_mut(Axis(0)).zip(sums.axis_iter(Axis(0))) {
            let norm = sum.dot(&sum).sqrt();
            if norm > 0.0 {
                row.assign(&(&sum / norm));
            }
        }
    }
    Ok(head)
}

/// Runs one stage. Starts from `init` when given (e.g. a stage-1 head),
/// otherwise from a fresh head. Single-threaded and deterministic.
pub fn train(dataset: &Dataset, config: &TrainConfig, init: Option<PoolingHead>) -> Result<TrainOutcome> {
    config.validate()?;
    let mut head = match init {
        Some(mut h) => {
            h.mode = config.pooling;
            h.attention.trainable = config.pooling == PoolingMode::Attn;
            h
        }
        None => initial_head(dataset, config)?,
    };
    if head.feature_dim() != dataset.feature_dim {
        return Err(Error::DimMismatch {
            expected: dataset.feature_dim,
            got: head.feature_dim(),
        });
    }

    let records: Vec<_> = dataset.split(Split::Train).collect();
    if records.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let labels: Vec<usize> = records
        .iter()
        .map(|r| {
            head.class_person_ids
                .binary_search(&r.person_id)
                .map_err(|_| Error::Config(format!("person {} has no classifier row", r.person_id)))
        })
        .collect::<Result<_>>()?;
    let sequences: Vec<&FrameFeatureSequence> = records.iter().map(|r| dataset.sequence(r.tracklet_index)).collect();

    let plan = config.plan()?;
    plan.validate(&head)?;
    let schedule = config.schedule_config();
    let loss_cfg = config.loss_config();
    let mut sampler = PkSampler::new(
        &labels,
        config.ids_per_batch(),
        config.instances_per_id,
        config.seed.wrapping_add(1),
    )?;
    let mut optimizer = OptimizerState::new(config.adam);
    let mut history = Vec::with_capacity(config.max_epochs);

    for epoch in 0..config.max_epochs {
        let lr = lr_at(epoch, &schedule)?;
        let batches = sampler.next_epoch();
        let mut mean = LossBreakdown::default();
        for batch in &batches {
            let seqs: Vec<&FrameFeatureSequence> = batch.iter().map(|&i| sequences[i]).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (losses, grads) = total_loss(&seqs, &batch_labels, &head, &loss_cfg)?;
            optimizer.step(&mut head, &grads, &plan, lr)?;
            mean.accumulate(&losses);
        }
        if !batches.is_empty() {
            mean.scale(1.0 / batches.len() as f64);
        }
        info!(
            "epoch {epoch:3} lr {lr:.3e} loss {:.5} (id {:.4} tri {:.4} i2t {:.4} t2i {:.4})",
            mean.total, mean.id, mean.tri, mean.i2t, mean.t2i
        );
        history.push(EpochRecord {
            epoch,
            lr,
            batches: batches.len(),
            loss: mean,
        });
    }
    Ok(TrainOutcome { head, history })
}
