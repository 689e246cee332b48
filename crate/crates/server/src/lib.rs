//! HTTP/JSON front end of the flexid pipeline.
//!
//! Every operation is a `POST` with a JSON body. Streaming identification is
//! session based: open a stream, push chunks of CSV lines, then finish it.
//! Failures answer with an [`ApiError`] body whose `kind` tells configuration,
//! data and model problems apart.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use uuid::Uuid;

use flexid_core::api::*;
use flexid_core::datagen::{build_classifier_dataset, generate};
use flexid_core::detect::{calibrate_series, Detector};
use flexid_core::evm::EvmModel;
use flexid_core::pipeline::{
    detect_batch, evaluate, identify_batch, os_cs_experiment, sweep, train_evm, Classifier, PipelineConfig,
    StreamEngine, StreamOutput,
};
use flexid_core::series::delta_encode;
use flexid_core::{Error, ErrorKind};

/// Request bodies up to this size are accepted (a model plus half a year of
/// five-minute samples stays well below it).
pub const BODY_LIMIT: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, Default)]
pub struct AppState {
    streams: Arc<Mutex<HashMap<Uuid, Arc<Mutex<StreamEngine>>>>>,
}

impl AppState {
    pub fn open_streams(&self) -> usize {
        self.streams.lock().expect("stream table").len()
    }

    fn stream(&self, id: Uuid) -> Result<Arc<Mutex<StreamEngine>>, AppError> {
        self.streams
            .lock()
            .expect("stream table")
            .get(&id)
            .cloned()
            .ok_or(AppError::UnknownStream(id))
    }
}

#[derive(Debug)]
pub enum AppError {
    Core(Error),
    BadRequest(String),
    UnknownStream(Uuid),
}

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        AppError::Core(e)
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            AppError::Core(e) => {
                let body = ApiError::from(&e);
                let status = match body.kind {
                    ErrorKind::Config => StatusCode::BAD_REQUEST,
                    ErrorKind::Data | ErrorKind::Model => StatusCode::UNPROCESSABLE_ENTITY,
                };
                (status, body)
            }
            AppError::BadRequest(message) => (
                StatusCode::BAD_REQUEST,
                ApiError {
                    kind: ErrorKind::Data,
                    message,
                },
            ),
            AppError::UnknownStream(id) => (
                StatusCode::NOT_FOUND,
                ApiError {
                    kind: ErrorKind::Data,
                    message: format!("no open stream {id}"),
                },
            ),
        };
        (status, axum::Json(body)).into_response()
    }
}

/// JSON body extractor whose rejections use the [`ApiError`] shape.
pub struct Json<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Json<T> {
    type Rejection = AppError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        axum::Json::<T>::from_request(req, state)
            .await
            .map(|axum::Json(v)| Json(v))
            .map_err(|e: JsonRejection| AppError::BadRequest(e.body_text()))
    }
}

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

type Reply<T> = Result<Json<T>, AppError>;

/// Runs CPU-bound work off the async executor.
async fn blocking<T, F>(f: F) -> Reply<T>
where
    F: FnOnce() -> flexid_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json).map_err(AppError::from),
        Err(e) => Err(AppError::BadRequest(format!("worker failed: {e}"))),
    }
}

fn checked(config: PipelineConfig) -> flexid_core::Result<PipelineConfig> {
    config.validate()?;
    Ok(config)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/simulate", post(simulate))
        .route("/v1/calibrate", post(calibrate))
        .route("/v1/train", post(train))
        .route("/v1/detect", post(detect))
        .route("/v1/identify", post(identify))
        .route("/v1/streams", post(open_stream))
        .route("/v1/streams/{id}/points", post(push_points))
        .route("/v1/streams/{id}/finish", post(finish_stream))
        .route("/v1/streams/{id}", delete(close_stream))
        .route("/v1/sweep", post(run_sweep))
        .route("/v1/oscs", post(run_oscs))
        .route("/v1/evaluate", post(run_evaluate))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves on an already bound listener until the task is dropped.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` (port 0 picks a free port) and serves in a background task.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(serve(listener, AppState::default()));
    Ok((local, handle))
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn simulate(Json(req): Json<SimulateRequest>) -> Reply<SimulateResponse> {
    blocking(move || {
        let cfg = checked(req.config)?;
        let s = generate(&cfg.scenario)?;
        Ok(SimulateResponse {
            series: s.series,
            truth: s.truth,
        })
    })
    .await
}

async fn calibrate(Json(req): Json<CalibrateRequest>) -> Reply<flexid_core::detect::Calibration> {
    blocking(move || {
        let cfg = checked(req.config)?;
        let detector = Detector::from_config(&cfg.detector)?;
        let len = cfg.detector.calibration_length(req.series.step().num_seconds());
        calibrate_series(&detector, &delta_encode(&req.series), len)
    })
    .await
}

async fn train(Json(req): Json<TrainRequest>) -> Reply<TrainResponse> {
    blocking(move || {
        let cfg = checked(req.config)?;
        let rows = match req.data {
            TrainingData::Rows(rows) => rows,
            TrainingData::Labeled { series, truth } => {
                build_classifier_dataset(&series, &truth, &cfg.features.dataset_options())?.train_vectors()
            }
        };
        let (model, report) = train_evm(&rows, &cfg.evm, true)?;
        Ok(TrainResponse { model, report })
    })
    .await
}

async fn detect(Json(req): Json<DetectRequest>) -> Reply<DetectResponse> {
    blocking(move || {
        let cfg = checked(req.config)?;
        detect_batch(&req.series, &cfg, req.calibration)
    })
    .await
}

fn classifier(cfg: &PipelineConfig, model: EvmModel) -> Classifier {
    Classifier {
        model: Arc::new(model),
        mode: cfg.evm.mode,
        zero_epsilon: cfg.features.zero_epsilon,
    }
}

async fn identify(Json(req): Json<IdentifyRequest>) -> Reply<IdentifyResponse> {
    blocking(move || {
        let cfg = checked(req.config)?;
        let c = classifier(&cfg, req.model);
        identify_batch(&req.series, &cfg, &c, req.calibration)
    })
    .await
}

async fn open_stream(State(state): State<AppState>, Json(req): Json<OpenStreamRequest>) -> Reply<StreamHandle> {
    let cfg = checked(req.config)?;
    let c = req.model.map(|m| classifier(&cfg, m));
    let engine = StreamEngine::new(cfg, c, req.calibration)?;
    let id = Uuid::new_v4();
    state
        .streams
        .lock()
        .expect("stream table")
        .insert(id, Arc::new(Mutex::new(engine)));
    tracing::debug!(%id, "stream opened");
    Ok(Json(StreamHandle { id }))
}

async fn push_points(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
    Json(req): Json<PushRequest>,
) -> Reply<StreamOutput> {
    let engine = state.stream(id)?;
    blocking(move || {
        let mut e = engine.lock().expect("stream engine");
        e.push_lines(req.lines.iter().map(String::as_str))
    })
    .await
}

async fn finish_stream(State(state): State<AppState>, Path(id): Path<Uuid>) -> Reply<StreamOutput> {
    let engine = state
        .streams
        .lock()
        .expect("stream table")
        .remove(&id)
        .ok_or(AppError::UnknownStream(id))?;
    let out = engine.lock().expect("stream engine").finish();
    tracing::debug!(%id, "stream finished");
    Ok(Json(out))
}

async fn close_stream(State(state): State<AppState>, Path(id): Path<Uuid>) -> Result<StatusCode, AppError> {
    state
        .streams
        .lock()
        .expect("stream table")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or(AppError::UnknownStream(id))
}

async fn run_sweep(Json(req): Json<SweepRequest>) -> Reply<SweepResponse> {
    blocking(move || {
        let cfg = checked(req.config)?;
        let report = sweep(&cfg, &req.series, &req.truth)?;
        Ok(SweepResponse { config: cfg, report })
    })
    .await
}

async fn run_oscs(Json(req): Json<OsCsRequest>) -> Reply<OsCsResponse> {
    blocking(move || {
        let cfg = checked(req.config)?;
        let ds = build_classifier_dataset(&req.series, &req.truth, &cfg.features.dataset_options())?;
        let (model, train) = match req.model {
            Some(m) => (m, None),
            None => {
                let (m, r) = train_evm(&ds.train_vectors(), &cfg.evm, true)?;
                (m, Some(r))
            }
        };
        let report = os_cs_experiment(&model, &ds)?;
        Ok(OsCsResponse {
            config: cfg,
            train,
            report,
        })
    })
    .await
}

async fn run_evaluate(Json(req): Json<EvaluateRequest>) -> Reply<EvaluateResponse> {
    blocking(move || {
        let cfg = checked(req.config)?;
        let idx: Vec<usize> = req.detections.iter().map(|d| d.index).collect();
        let report = evaluate(&idx, &req.truth, req.len, req.eval_start, &cfg.evaluation.fad, req.step_minutes)?;
        Ok(EvaluateResponse { config: cfg, report })
    })
    .await
}
