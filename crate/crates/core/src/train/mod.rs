//! Datasets, the training loop, evaluation and experiment drivers.

mod config;
mod data;
mod eval;
mod experiment;
mod trainer;

pub use config::{LrSchedule, TrainConfig};
pub use data::{sequence_flow_inputs, Dataset, SequenceData};
pub use eval::{evaluate, mean_baseline, predict_group, EvalReport, FrameResult};
pub use experiment::{
    ablation_grid, format_ablation_table, format_mixing_table, night_mixing, run_ablation, AblationRow,
    AblationSetting, MixingReport,
};
pub use trainer::{batch_tensors, train, MetricsRow, TrainOutcome, METRICS_HEADER};

use thiserror::Error;

use crate::augment::AugmentError;
use crate::density::DensityError;
use crate::flow::FlowError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty dataset: {0}")]
    Empty(&'static str),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
