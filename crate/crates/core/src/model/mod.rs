//! The policy network: stem, three stages of spatial/channel mixing blocks,
//! multi-scale fusion, the action head, and its training loop.

pub mod config;
pub mod network;
pub mod optim;
pub mod parts;
pub mod train;

pub use config::{HeadReduction, ModelConfig, OptimizerKind, TrainConfig};
pub use network::{
    batch_mse, check_action, mse_loss, parameter_group, predict, ActionVector, ArgnBlock,
    FeatureMaps, ForwardTrace, PolicyModel, Stage, SupervisedLoss, BLOCKS_PER_STAGE,
};
pub use optim::Optimizer;
pub use parts::{
    action_head, channel_mixing, fuse_multiscale, stem, ChannelMixParams, FusionParams, HeadParams,
    StemParams, ACTION_DIM,
};
pub use train::{dataset_loss, train_policy, TrainOutcome, STEM_TARGET_STD};
