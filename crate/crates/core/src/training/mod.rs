//! Training of the pooling head under the weighted multi-term objective.

mod head;
mod losses;
mod objective;
mod optim;
mod plan;
mod sampler;
mod schedule;
mod trainer;

pub use head::{HeadFile, HeadGrads, ParamTensor, PoolingHead, TensorData, HEAD_FORMAT, HEAD_VERSION};
pub use losses::{
    cross_modal_losses, id_loss, triplet_loss, CrossModalOutput, CrossModalTerm, IdLossOutput, LossOutput, LossWeights,
    TripletMargin,
};
pub use objective::{batch_features, total_loss, LossBreakdown, LossConfig};
pub use optim::{adam_update, AdamConfig, Moments, OptimizerState};
pub use plan::{ParamGroup, ParamGroupPlan};
pub use sampler::PkSampler;
pub use schedule::{effective_lr, lr_at, LrPolicy, ScheduleConfig, Stage};
pub use trainer::{class_ids, initial_head, train, EpochRecord, MemoryInit, Preset, TrainConfig, TrainOutcome};
