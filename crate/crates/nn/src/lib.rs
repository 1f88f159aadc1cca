//! A small feedforward network stack: exact binary64 reference passes,
//! inference with every multiply-accumulate layer run on exact dot products
//! in a low-precision format, and SGD training that rounds every tensor to
//! an emulated format.

pub mod analysis;
pub mod conv;
pub mod data;
pub mod gemm;
pub mod io;
pub mod network;
pub mod quantized;
pub mod tensor;
pub mod train;

use lowprec_core::{EmacError, FormatError, QuantError};
use thiserror::Error;

pub use network::{Arch, BatchNorm, Conv2d, Dense, Layer, Network, Pool};
pub use data::DatasetSplit;
pub use quantized::{evaluate, Calibration, Forward, QuantizedNet};
pub use tensor::Tensor;
pub use train::{train, Emulated, Precision, TrainConfig, Trainer};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("quantized inference needs calibration for {needed} MAC layers, got {got}")]
    MissingCalibration { needed: usize, got: usize },
    #[error("layer kind {0} is not supported here")]
    UnsupportedLayer(&'static str),
    #[error("cannot fold batch norm: {0}")]
    Fold(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Emac(#[from] EmacError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Format(#[from] FormatError),
}
