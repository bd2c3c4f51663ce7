//! Weight-sharing supernet.
//!
//! Every tensor is allocated once at the size of the maximal configuration.
//! A subnetwork reads leading slices of those tensors (first `d_state`
//! rows/columns of the state path, first expanded columns of the content
//! path, first hidden units of the MLP) and the first `depth` blocks of each
//! stage. Training a subnetwork therefore updates the shared leading region
//! in place.
//!
//! Each block applies a linear write/state/read recurrence over the tokens in
//! row-major order, `h_t = A h_{t-1} + B x_t`, `y_t = C h_t`, followed by a
//! residual `tanh` MLP. The last stage is followed by one global attention
//! block whose output tokens feed both the prediction head and distillation.

mod model;
mod params;
mod schedule;
mod task;

pub use model::{
    evaluate_loss, forward, forward_macs, loss_and_gradients, predict_patches, train_step, validation_error, ForwardOutput,
    GtLoss, LossEval, Objective, Sgd, StepReport,
};
pub use params::{
    expanded_width, init_maximal, BlockSlots, BlockTensor, NetSlots, ParamClass, ParamId, StageSlots, SubnetView,
    SubnetViewMut, SupernetDims, SupernetParams,
};
pub use schedule::{sample_uniform, ActiveSets, Dimension, Mode, Phase, ProgressiveSchedule, SchedulePosition, TrainMask};
pub use task::{MicroTask, Sample, TaskSpec};
