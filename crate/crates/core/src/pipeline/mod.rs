//! End-to-end orchestration: configuration, the streaming identification
//! engine and its batch twin, EVM training and the evaluation experiments.

mod config;
mod engine;
mod experiments;
mod train;

pub use config::{
    default_rho_grid, EvaluationConfig, EvmConfig, FeaturesConfig, IoConfig, PipelineConfig, CONFIG_VERSION,
};
pub use engine::{
    detect_batch, fuse, identify_batch, Classifier, IdentifiedEvent, SampleVerdict, StreamEngine, StreamOutput, Verdict,
};
pub use experiments::{evaluate, os_cs_experiment, sweep, EvaluationReport, OpennessLevel, OsCsReport, SweepReport, SweepSummary};
pub use train::{time_series_folds, train_evm, RhoScore, TrainReport};
