//! The bi-path crowd counter: image and flow encoder-decoder streams,
//! spatial (SAM) and channel (CAM) attention, and a regression head that
//! emits a full-resolution density map.

mod attention;
mod bipath;
mod config;
mod layers;

pub use attention::{cam_forward, sam_forward, Attended, SamParams};
pub use bipath::{loss, BiPathModel};
pub use config::{AttentionPlacement, ModelConfig, WeightInit, DECODER_CHANNELS, ENCODER_CHANNELS};
pub use layers::{Conv, Decoder, Encoder};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input {width}x{height} not divisible by 8")]
    NotDivisible { width: usize, height: usize },
    #[error("image and flow inputs differ: {0:?} vs {1:?}")]
    InputMismatch(Vec<usize>, Vec<usize>),
    #[error("expected {expected} channels, got {got}")]
    Channels { expected: usize, got: usize },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
