//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::datagen::GroundTruth;
use crate::detect::{Calibration, DetectionEvent};
use crate::error::{Error, ErrorKind};
use crate::evm::EvmModel;
use crate::features::FeatureVector;
use crate::pipeline::{EvaluationReport, IdentifiedEvent, OsCsReport, PipelineConfig, SweepReport, TrainReport};
use crate::series::RawSeries;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimulateRequest {
    #[serde(default)]
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub series: RawSeries,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrateRequest {
    #[serde(default)]
    pub config: PipelineConfig,
    pub series: RawSeries,
}

/// Training input: feature rows, or a labeled series from which the
/// classifier dataset is built (only its training split is used).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingData {
    Rows(Vec<FeatureVector>),
    Labeled { series: RawSeries, truth: GroundTruth },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRequest {
    #[serde(default)]
    pub config: PipelineConfig,
    pub data: TrainingData,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResponse {
    pub model: EvmModel,
    pub report: TrainReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectRequest {
    #[serde(default)]
    pub config: PipelineConfig,
    pub series: RawSeries,
    #[serde(default)]
    pub calibration: Option<Calibration>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyRequest {
    #[serde(default)]
    pub config: PipelineConfig,
    pub series: RawSeries,
    pub model: EvmModel,
    #[serde(default)]
    pub calibration: Option<Calibration>,
}

/// Opens a streaming session. Without a model the session only detects.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OpenStreamRequest {
    #[serde(default)]
    pub config: PipelineConfig,
    #[serde(default)]
    pub model: Option<EvmModel>,
    #[serde(default)]
    pub calibration: Option<Calibration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHandle {
    pub id: Uuid,
}

/// A chunk of `timestamp,load_kw` lines.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PushRequest {
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRequest {
    #[serde(default)]
    pub config: PipelineConfig,
    pub series: RawSeries,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResponse {
    pub config: PipelineConfig,
    pub report: SweepReport,
}

/// Runs the openness ladder on the dataset built from a labeled series. A
/// model is trained on its training split when none is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OsCsRequest {
    #[serde(default)]
    pub config: PipelineConfig,
    pub series: RawSeries,
    pub truth: GroundTruth,
    #[serde(default)]
    pub model: Option<EvmModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OsCsResponse {
    pub config: PipelineConfig,
    pub train: Option<TrainReport>,
    pub report: OsCsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateRequest {
    #[serde(default)]
    pub config: PipelineConfig,
    pub detections: Vec<DetectionEvent>,
    pub truth: GroundTruth,
    /// Series length in samples.
    pub len: usize,
    /// First index that counts towards FP and TN.
    #[serde(default)]
    pub eval_start: usize,
    #[serde(default = "default_step_minutes")]
    pub step_minutes: f64,
}

fn default_step_minutes() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub config: PipelineConfig,
    pub report: EvaluationReport,
}

pub type IdentifyResponse = Vec<IdentifiedEvent>;
pub type DetectResponse = Vec<DetectionEvent>;
