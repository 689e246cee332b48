//! Async client for the flexid HTTP service.

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use flexid_core::api::*;
use flexid_core::detect::Calibration;
use flexid_core::pipeline::StreamOutput;
use flexid_core::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{} ({status})", error.message)]
    Api { status: StatusCode, error: ApiError },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response ({status}): {body}")]
    Unexpected { status: StatusCode, body: String },
}

impl ClientError {
    /// Error category; transport failures count as data errors.
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Api { error, .. } => error.kind,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let body = resp.text().await?;
        match serde_json::from_str::<ApiError>(&body) {
            Ok(error) => Err(ClientError::Api { status, error }),
            Err(_) => Err(ClientError::Unexpected { status, body }),
        }
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Health> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn simulate(&self, req: &SimulateRequest) -> Result<SimulateResponse> {
        self.post("/v1/simulate", req).await
    }

    pub async fn calibrate(&self, req: &CalibrateRequest) -> Result<Calibration> {
        self.post("/v1/calibrate", req).await
    }

    pub async fn train(&self, req: &TrainRequest) -> Result<TrainResponse> {
        self.post("/v1/train", req).await
    }

    pub async fn detect(&self, req: &DetectRequest) -> Result<DetectResponse> {
        self.post("/v1/detect", req).await
    }

    pub async fn identify(&self, req: &IdentifyRequest) -> Result<IdentifyResponse> {
        self.post("/v1/identify", req).await
    }

    pub async fn open_stream(&self, req: &OpenStreamRequest) -> Result<StreamHandle> {
        self.post("/v1/streams", req).await
    }

    pub async fn push_lines(&self, stream: &StreamHandle, lines: Vec<String>) -> Result<StreamOutput> {
        self.post(&format!("/v1/streams/{}/points", stream.id), &PushRequest { lines })
            .await
    }

    /// Flushes pending detections and closes the session.
    pub async fn finish_stream(&self, stream: &StreamHandle) -> Result<StreamOutput> {
        self.post(&format!("/v1/streams/{}/finish", stream.id), &()).await
    }

    /// Drops the session without flushing.
    pub async fn close_stream(&self, stream: &StreamHandle) -> Result<()> {
        let resp = self
            .http
            .delete(format!("{}/v1/streams/{}", self.base, stream.id))
            .send()
            .await?;
        if resp.status() == StatusCode::NO_CONTENT {
            return Ok(());
        }
        Self::decode::<serde::de::IgnoredAny>(resp).await.map(|_| ())
    }

    pub async fn sweep(&self, req: &SweepRequest) -> Result<SweepResponse> {
        self.post("/v1/sweep", req).await
    }

    pub async fn oscs(&self, req: &OsCsRequest) -> Result<OsCsResponse> {
        self.post("/v1/oscs", req).await
    }

    pub async fn evaluate(&self, req: &EvaluateRequest) -> Result<EvaluateResponse> {
        self.post("/v1/evaluate", req).await
    }
}
