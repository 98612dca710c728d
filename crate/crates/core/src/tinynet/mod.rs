//! A small dual-branch segmentation network trained from scratch on CPU,
//! with reverse-mode autodiff, Dice loss and Adam.

pub mod augment;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use augment::{augment_pair, hflip, rot90, AugmentConfig};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentTable, VariantRow};
pub use gradcheck::{grad_check, grad_check_linear_toy, GradCheckReport};
pub use graph::{Graph, NodeId, ParamGrads};
pub use loss::{dice_grad, dice_value};
pub use model::{
    enumerate_sharing_configs, BranchSpec, ForwardNodes, ModelVariant, NetInput, NetworkConfig, Position,
    ShareMode, SharingConfig, TinyNetwork,
};
pub use optim::{Adam, AdamConfig};
pub use params::{Group, ParamStore};
pub use synth::{appearance_only_bound, save_synth_dataset, synth_generate, SynthParams, SynthSample};
pub use tensor::Tensor;
pub use train::{evaluate, train, train_step, EvalConfig, EvalResult, LossWeights, StepLoss, TrainConfig};
