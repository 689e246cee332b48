//! Streaming detection and open-set identification of fast-ramped
//! flexibility activations in aggregated load series.

pub mod api;
pub mod datagen;
pub mod detect;
pub mod error;
pub mod evm;
pub mod features;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod sampler;
pub mod series;
pub mod weibull;

pub use error::{Error, ErrorKind, Result};
pub use labels::EventClass;
