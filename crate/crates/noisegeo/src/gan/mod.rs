//! Toy GAN training harness and the experiments built on it.

pub mod data;
pub mod experiments;
pub mod invert;
pub mod train;

pub use data::{sample_dataset, DatasetSpec};
pub use experiments::{
    ablation_suite, dimension_trap_experiment, injection_comparison, AblationTable,
    ComparisonTable, ExperimentConfig, TrapReport,
};
pub use invert::{invert_latent, InversionReport};
pub use train::{train_gan, InjectionMode, TrainConfig, TrainOutcome, TrainReport};
