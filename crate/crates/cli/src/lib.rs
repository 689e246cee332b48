//! Command-line front end. Every subcommand is a request to the flexid
//! service; without `--server` an in-process instance on a loopback port
//! answers it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::Serialize;
use tokio::io::AsyncBufReadExt;

use flexid_client::{Client, ClientError};
use flexid_core::api::*;
use flexid_core::datagen::GroundTruth;
use flexid_core::detect::{Calibration, DetectionEvent};
use flexid_core::evm::{EvmModel, Mode};
use flexid_core::features::read_feature_csv;
use flexid_core::metrics::{write_sweep_csv, FpPenalty};
use flexid_core::pipeline::{PipelineConfig, StreamOutput};
use flexid_core::series::{ingest_reader, write_csv, IngestOptions, RawSeries};
use flexid_core::{Error, ErrorKind};

/// Lines sent to the service per streaming request.
pub const STREAM_CHUNK: usize = 256;
/// A partial chunk is flushed after this long without new input.
pub const STREAM_IDLE: Duration = Duration::from_millis(200);

#[derive(Debug, Parser)]
#[command(name = "flexid", version, about = "Detect and identify flexibility activations in aggregated load series")]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Input file, or `-` to stream from stdin.
    #[arg(long, global = true, value_name = "PATH|-")]
    pub input: Option<String>,
    /// Ground-truth events CSV.
    #[arg(long, global = true, value_name = "PATH")]
    pub truth: Option<PathBuf>,
    /// EVM model document.
    #[arg(long, global = true, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Calibration document written by `calibrate`.
    #[arg(long, global = true, value_name = "PATH")]
    pub calibration: Option<PathBuf>,
    /// Directory for reports and generated files.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["open", "closed"])]
    pub mode: Option<String>,
    #[arg(long, global = true, value_parser = ["literal", "marginal"])]
    pub fp_penalty: Option<String>,
    /// Service root URL; an in-process server is used when absent.
    #[arg(long, global = true, value_name = "URL")]
    pub server: Option<String>,
    /// Prints the effective configuration and exits.
    #[arg(long)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generates a synthetic series and its ground truth as CSV files.
    Simulate,
    /// Derives the score normalization from the calibration prefix.
    Calibrate,
    /// Trains the EVM from feature rows or from a series with ground truth.
    Train,
    /// Flags detections (batch for files, streaming for stdin).
    Detect,
    /// Detects, samples and classifies (batch for files, streaming for stdin).
    Identify,
    /// Evaluates the detector over the threshold grid.
    Sweep,
    /// Compares open- and closed-set classification over the openness ladder.
    Oscs,
    /// Scores detections (JSON lines) against ground truth.
    Evaluate {
        /// Series the detections were taken from; sets length and step.
        #[arg(long, value_name = "PATH")]
        series: Option<PathBuf>,
    },
}

/// Failure with the category that selects the exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub fn exit_code(&self) -> u8 {
        exit_code(self.kind)
    }
}

pub fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Model => 4,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with(cli: Cli) -> ExitCode {
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = rt.block_on(run(&cli, &mut out));
    let flushed = out.flush();
    match result.and(flushed.map_err(CliError::from)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit_code())
        }
    }
}

/// Loads the configuration file (or the defaults) and applies flag overrides.
pub fn effective_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.scenario.seed = s;
    }
    if let Some(m) = &cli.mode {
        cfg.evm.mode = m.parse::<Mode>()?;
    }
    if let Some(p) = &cli.fp_penalty {
        cfg.evaluation.fad.fp_penalty = p.parse::<FpPenalty>()?;
    }
    let set = |slot: &mut Option<String>, v: Option<String>| {
        if v.is_some() {
            *slot = v;
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    set(&mut cfg.io.input, cli.input.clone());
    set(&mut cfg.io.truth, path(&cli.truth));
    set(&mut cfg.io.model, path(&cli.model));
    set(&mut cfg.io.calibration, path(&cli.calibration));
    set(&mut cfg.io.out, path(&cli.out));
    cfg.validate()?;
    Ok(cfg)
}

pub async fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let cfg = effective_config(cli)?;
    if cli.print_config {
        out.write_all(cfg.to_toml().as_bytes())?;
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(CliError::config("no subcommand given (see --help)"));
    };

    let (client, _server) = match &cli.server {
        Some(url) => (Client::new(url.clone()), None),
        None => {
            let (addr, handle) = flexid_server::spawn(([127, 0, 0, 1], 0).into()).await?;
            (Client::new(format!("http://{addr}")), Some(AbortOnDrop(handle)))
        }
    };
    let ctx = Ctx { cfg, client };
    match command {
        Command::Simulate => ctx.simulate(out).await,
        Command::Calibrate => ctx.calibrate(out).await,
        Command::Train => ctx.train(out).await,
        Command::Detect => ctx.stream_or_batch(out, false).await,
        Command::Identify => ctx.stream_or_batch(out, true).await,
        Command::Sweep => ctx.sweep(out).await,
        Command::Oscs => ctx.oscs(out).await,
        Command::Evaluate { series } => ctx.evaluate(out, series.as_deref()).await,
    }
}

struct AbortOnDrop<T>(tokio::task::JoinHandle<T>);

impl<T> Drop for AbortOnDrop<T> {
    fn drop(&mut self) {
        self.0.abort();
    }
}

fn json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> CliResult<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| CliError::data(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

fn open(path: &str) -> CliResult<Box<dyn Read>> {
    if path == "-" {
        return Ok(Box::new(std::io::stdin()));
    }
    File::open(path)
        .map(|f| Box::new(BufReader::new(f)) as Box<dyn Read>)
        .map_err(|e| CliError::data(format!("{path}: {e}")))
}

fn read_series(path: &str) -> CliResult<RawSeries> {
    let ingested = ingest_reader(open(path)?, &IngestOptions::default())?;
    for g in &ingested.gaps {
        tracing::warn!(after = g.after_index, missing = g.missing, "gap in input series");
    }
    Ok(ingested.series)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &str, kind: ErrorKind) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::new(kind, format!("{path}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| CliError::new(kind, format!("{path}: {e}")))
}

struct Ctx {
    cfg: PipelineConfig,
    client: Client,
}

impl Ctx {
    fn input(&self) -> CliResult<&str> {
        self.cfg
            .io
            .input
            .as_deref()
            .ok_or_else(|| CliError::config("no input given (--input or io.input)"))
    }

    fn truth(&self) -> CliResult<GroundTruth> {
        let path = self
            .cfg
            .io
            .truth
            .as_deref()
            .ok_or_else(|| CliError::config("no ground truth given (--truth or io.truth)"))?;
        Ok(GroundTruth::read_csv(open(path)?)?)
    }

    fn model(&self) -> CliResult<EvmModel> {
        let path = self
            .cfg
            .io
            .model
            .as_deref()
            .ok_or_else(|| CliError::new(ErrorKind::Model, "no model given (--model or io.model)"))?;
        Ok(EvmModel::load(Path::new(path))?)
    }

    fn calibration(&self) -> CliResult<Option<Calibration>> {
        self.cfg
            .io
            .calibration
            .as_deref()
            .map(|p| read_json(p, ErrorKind::Data))
            .transpose()
    }

    fn out_dir(&self) -> CliResult<Option<PathBuf>> {
        let Some(dir) = self.cfg.io.out.as_deref() else {
            return Ok(None);
        };
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{dir}: {e}")))?;
        Ok(Some(PathBuf::from(dir)))
    }

    fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
        let path = dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    async fn simulate(&self, out: &mut dyn Write) -> CliResult<()> {
        let resp = self
            .client
            .simulate(&SimulateRequest {
                config: self.cfg.clone(),
            })
            .await?;
        let dir = self.out_dir()?.unwrap_or_else(|| PathBuf::from("."));
        write_csv(&resp.series, Self::create(&dir, "series.csv")?)?;
        resp.truth.write_csv(Self::create(&dir, "truth.csv")?)?;
        let mut counts = std::collections::BTreeMap::new();
        for e in &resp.truth.events {
            *counts.entry(e.class.as_str()).or_insert(0usize) += 1;
        }
        json_line(
            out,
            &serde_json::json!({
                "series": dir.join("series.csv"),
                "truth": dir.join("truth.csv"),
                "points": resp.series.len(),
                "events": counts,
                "seed": self.cfg.scenario.seed,
            }),
        )
    }

    async fn calibrate(&self, out: &mut dyn Write) -> CliResult<()> {
        let series = read_series(self.input()?)?;
        let cal = self
            .client
            .calibrate(&CalibrateRequest {
                config: self.cfg.clone(),
                series,
            })
            .await?;
        if let Some(dir) = self.out_dir()? {
            let mut f = Self::create(&dir, "calibration.json")?;
            json_line(&mut f, &cal)?;
        }
        json_line(out, &cal)
    }

    async fn train(&self, out: &mut dyn Write) -> CliResult<()> {
        let model_path = self
            .cfg
            .io
            .model
            .clone()
            .ok_or_else(|| CliError::config("train needs a model path to write (--model or io.model)"))?;
        let input = self.input()?;
        let data = if self.cfg.io.truth.is_some() {
            TrainingData::Labeled {
                series: read_series(input)?,
                truth: self.truth()?,
            }
        } else {
            TrainingData::Rows(read_feature_csv(open(input)?)?)
        };
        let resp = self
            .client
            .train(&TrainRequest {
                config: self.cfg.clone(),
                data,
            })
            .await?;
        resp.model.save(Path::new(&model_path))?;
        if resp.report.fallback {
            tracing::warn!(rho = resp.report.rho, "no threshold reached the F1 target");
        }
        json_line(out, &serde_json::json!({ "model": model_path, "report": resp.report }))
    }

    async fn stream_or_batch(&self, out: &mut dyn Write, identify: bool) -> CliResult<()> {
        let model = if identify { Some(self.model()?) } else { None };
        let calibration = self.calibration()?;
        let input = self.input()?;
        if input == "-" {
            return self.stream_stdin(out, model, calibration).await;
        }
        let series = read_series(input)?;
        let config = self.cfg.clone();
        match model {
            Some(model) => {
                let events = self
                    .client
                    .identify(&IdentifyRequest {
                        config,
                        series,
                        model,
                        calibration,
                    })
                    .await?;
                events.iter().try_for_each(|e| json_line(out, e))
            }
            None => {
                let dets = self
                    .client
                    .detect(&DetectRequest {
                        config,
                        series,
                        calibration,
                    })
                    .await?;
                dets.iter().try_for_each(|d| json_line(out, d))
            }
        }
    }

    /// Streams stdin through a service session in chunks.
    async fn stream_stdin(
        &self,
        out: &mut dyn Write,
        model: Option<EvmModel>,
        calibration: Option<Calibration>,
    ) -> CliResult<()> {
        let identify = model.is_some();
        let handle = self
            .client
            .open_stream(&OpenStreamRequest {
                config: self.cfg.clone(),
                model,
                calibration,
            })
            .await?;
        let emit = |out: &mut dyn Write, o: StreamOutput| -> CliResult<()> {
            for s in &o.skipped {
                tracing::warn!("skipped input row: {s}");
            }
            if identify {
                o.events.iter().try_for_each(|e| json_line(out, e))?;
            } else {
                o.detections.iter().try_for_each(|d| json_line(out, d))?;
            }
            out.flush()?;
            Ok(())
        };

        let mut lines = tokio::io::BufReader::new(tokio::io::stdin()).lines();
        let mut chunk: Vec<String> = Vec::with_capacity(STREAM_CHUNK);
        let result: CliResult<()> = async {
            loop {
                let next = if chunk.is_empty() {
                    Some(lines.next_line().await?)
                } else {
                    tokio::time::timeout(STREAM_IDLE, lines.next_line()).await.ok().transpose()?
                };
                match next {
                    Some(Some(line)) => {
                        chunk.push(line);
                        if chunk.len() < STREAM_CHUNK {
                            continue;
                        }
                    }
                    Some(None) => break,
                    None => {}
                }
                let o = self.client.push_lines(&handle, std::mem::take(&mut chunk)).await?;
                emit(out, o)?;
            }
            if !chunk.is_empty() {
                let o = self.client.push_lines(&handle, std::mem::take(&mut chunk)).await?;
                emit(out, o)?;
            }
            Ok(())
        }
        .await;
        match result {
            Ok(()) => emit(out, self.client.finish_stream(&handle).await?),
            Err(e) => {
                if let Err(close) = self.client.close_stream(&handle).await {
                    tracing::warn!("closing stream failed: {close}");
                }
                Err(e)
            }
        }
    }

    async fn sweep(&self, out: &mut dyn Write) -> CliResult<()> {
        let resp = self
            .client
            .sweep(&SweepRequest {
                config: self.cfg.clone(),
                series: read_series(self.input()?)?,
                truth: self.truth()?,
            })
            .await?;
        if let Some(dir) = self.out_dir()? {
            write_sweep_csv(&resp.report.rows, Self::create(&dir, "sweep.csv")?)?;
            let mut f = Self::create(&dir, "sweep_summary.json")?;
            json_line(&mut f, &serde_json::json!({ "config": resp.config, "summary": resp.report.summary }))?;
        }
        json_line(out, &resp.report.summary)
    }

    async fn oscs(&self, out: &mut dyn Write) -> CliResult<()> {
        let model = match self.cfg.io.model {
            Some(_) => Some(self.model()?),
            None => None,
        };
        let resp = self
            .client
            .oscs(&OsCsRequest {
                config: self.cfg.clone(),
                series: read_series(self.input()?)?,
                truth: self.truth()?,
                model,
            })
            .await?;
        if let Some(dir) = self.out_dir()? {
            let mut f = Self::create(&dir, "oscs.csv")?;
            writeln!(f, "openness,open_f1,closed_f1")?;
            for l in &resp.report.levels {
                writeln!(f, "{},{},{}", l.openness, l.open_f1, l.closed_f1)?;
            }
            let mut f = Self::create(&dir, "oscs.json")?;
            json_line(&mut f, &resp)?;
        }
        json_line(out, &serde_json::json!({ "train": resp.train, "report": resp.report }))
    }

    async fn evaluate(&self, out: &mut dyn Write, series: Option<&Path>) -> CliResult<()> {
        let detections = read_detections(open(self.input()?)?)?;
        let truth = self.truth()?;
        let (len, step_secs) = match series {
            Some(p) => {
                let s = read_series(&p.display().to_string())?;
                (s.len(), s.step().num_seconds())
            }
            None => {
                let last = truth.events.iter().map(|e| e.end + 1);
                let len = last.chain(detections.iter().map(|d| d.index + 1)).max().unwrap_or(0);
                tracing::warn!(len, "no --series given; length taken from truth and detections, step 5 min");
                (len, flexid_core::series::DEFAULT_STEP_SECS)
            }
        };
        let resp = self
            .client
            .evaluate(&EvaluateRequest {
                config: self.cfg.clone(),
                detections,
                truth,
                len,
                eval_start: self.cfg.detector.calibration_length(step_secs),
                step_minutes: step_secs as f64 / 60.0,
            })
            .await?;
        json_line(out, &resp.report)
    }
}

/// Reads detections from JSON lines. Identified events are accepted too:
/// only their index, timestamp and score are used.
pub fn read_detections<R: Read>(input: R) -> CliResult<Vec<DetectionEvent>> {
    #[derive(serde::Deserialize)]
    struct Row {
        index: usize,
        timestamp: chrono::DateTime<chrono::Utc>,
        score: f64,
        #[serde(default)]
        threshold: f64,
        #[serde(default)]
        detector: String,
    }
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Row = serde_json::from_str(&line).map_err(|e| CliError::data(format!("line {}: {e}", i + 1)))?;
        rows.push(DetectionEvent {
            index: r.index,
            timestamp: r.timestamp,
            score: r.score,
            threshold: r.threshold,
            detector: r.detector,
        });
    }
    Ok(rows)
}
