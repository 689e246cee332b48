//! Point-anomaly detectors over the delta-encoded stream.
//!
//! Every detector maps the history ending at sample `t` to a raw score, which
//! is normalized into `[0, 1]` by the largest raw score seen in a calibration
//! prefix: `score = min(1, raw / s_max)`. A point is flagged iff `score > tau`.
//! The calibration prefix itself is never flagged.

mod spectral;

use std::collections::VecDeque;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use spectral::{SpectralResidual, SrParams};

use crate::error::{Error, Result};
use crate::series::DeltaSeries;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    Persistence,
    SpectralResidual,
}

/// `[detector]` section of the pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub tau: f64,
    pub calibration_days: u32,
    pub sr_window: usize,
    pub sr_local_avg: usize,
    pub sr_estimated_points: usize,
    pub sr_filter: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let sr = SrParams::default();
        Self {
            kind: DetectorKind::Persistence,
            tau: 0.6,
            calibration_days: 10,
            sr_window: sr.window,
            sr_local_avg: sr.local_avg,
            sr_estimated_points: sr.estimated_points,
            sr_filter: sr.filter,
        }
    }
}

impl DetectorConfig {
    pub fn sr_params(&self) -> SrParams {
        SrParams {
            window: self.sr_window,
            local_avg: self.sr_local_avg,
            estimated_points: self.sr_estimated_points,
            filter: self.sr_filter,
        }
    }

    /// Calibration prefix length in samples for a given sampling step.
    pub fn calibration_length(&self, step_secs: i64) -> usize {
        self.calibration_days as usize * (86_400 / step_secs.max(1)) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("detector.tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.calibration_days == 0 {
            return Err(Error::Config("detector.calibration_days must be positive".into()));
        }
        if self.kind == DetectorKind::SpectralResidual {
            self.sr_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Detector {
    /// Persistence forecast `x̂_t = x_{t-1}`; on deltas the raw score is `|x_Δ,t|`.
    Persistence,
    SpectralResidual(SpectralResidual),
}

impl Detector {
    pub fn from_config(cfg: &DetectorConfig) -> Result<Self> {
        Ok(match cfg.kind {
            DetectorKind::Persistence => Detector::Persistence,
            DetectorKind::SpectralResidual => {
                Detector::SpectralResidual(SpectralResidual::new(cfg.sr_params())?)
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Detector::Persistence => "persistence",
            Detector::SpectralResidual(_) => "spectral_residual",
        }
    }

    /// Number of trailing deltas (current one included) a score needs.
    pub fn history(&self) -> usize {
        match self {
            Detector::Persistence => 1,
            Detector::SpectralResidual(sr) => sr.params().window,
        }
    }

    /// Raw score of the last element of `window`.
    pub fn raw_score(&self, window: &[f64]) -> Result<f64> {
        match self {
            Detector::Persistence => window.last().map(|d| d.abs()).ok_or(Error::InsufficientHistory {
                needed: 1,
                available: 0,
            }),
            Detector::SpectralResidual(sr) => sr.raw_score(window),
        }
    }
}

/// Normalization constants derived from a calibration prefix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Largest raw score observed in the prefix.
    pub s_max: f64,
    /// Number of stream samples (seed included) the prefix spans.
    pub calibration_length: usize,
}

impl Calibration {
    pub fn new(s_max: f64, calibration_length: usize) -> Result<Self> {
        if !(s_max.is_finite() && s_max > 0.0) {
            return Err(Error::Calibration(format!(
                "maximum raw score must be positive, got {s_max}"
            )));
        }
        Ok(Self {
            s_max,
            calibration_length,
        })
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw / self.s_max).min(1.0)
    }
}

/// Normalized persistence score of one delta value.
pub fn persistence_score(delta: f64, cal: Option<&Calibration>) -> Result<f64> {
    let cal = cal.ok_or_else(|| Error::Calibration("detector is not calibrated".into()))?;
    Ok(cal.normalize(delta.abs()))
}

/// Normalized spectral-residual score of the last element of `window`.
pub fn sr_score(sr: &SpectralResidual, window: &[f64], cal: Option<&Calibration>) -> Result<f64> {
    let raw = sr.raw_score(window)?;
    let cal = cal.ok_or_else(|| Error::Calibration("detector is not calibrated".into()))?;
    Ok(cal.normalize(raw))
}

/// Calibrates on a prefix of deltas (the seed value excluded).
///
/// Every position with enough history contributes its raw score.
pub fn calibrate(detector: &Detector, prefix: &[f64]) -> Result<Calibration> {
    let h = detector.history();
    if prefix.len() < h {
        return Err(Error::InsufficientHistory {
            needed: h,
            available: prefix.len(),
        });
    }
    let mut s_max = 0.0f64;
    for end in h..=prefix.len() {
        s_max = s_max.max(detector.raw_score(&prefix[end - h..end])?);
    }
    if s_max <= 0.0 {
        return Err(Error::Calibration("all raw scores in the prefix are zero".into()));
    }
    Calibration::new(s_max, prefix.len() + 1)
}

/// Calibrates on the first `calibration_length` samples of an encoded series.
pub fn calibrate_series(
    detector: &Detector,
    series: &DeltaSeries,
    calibration_length: usize,
) -> Result<Calibration> {
    if calibration_length < 2 || calibration_length >= series.len() {
        return Err(Error::InsufficientHistory {
            needed: calibration_length.max(2) + 1,
            available: series.len(),
        });
    }
    calibrate(detector, &series.values()[1..calibration_length])
}

/// Normalized score per sample. Samples inside the calibration prefix get
/// `f64::NEG_INFINITY` so that no threshold ever flags them.
pub fn score_series(detector: &Detector, series: &DeltaSeries, cal: &Calibration) -> Result<Vec<f64>> {
    let v = series.values();
    let h = detector.history();
    let start = cal.calibration_length.max(h);
    let mut scores = vec![f64::NEG_INFINITY; v.len()];
    for t in start..v.len() {
        scores[t] = cal.normalize(detector.raw_score(&v[t + 1 - h..=t])?);
    }
    Ok(scores)
}

/// A flagged sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub index: usize,
    pub timestamp: DateTime<Utc>,
    pub score: f64,
    pub threshold: f64,
    pub detector: String,
}

/// Calibrates on the prefix, scores the rest and returns every point with `score > tau`.
pub fn run_detector(
    series: &DeltaSeries,
    detector: &Detector,
    calibration_length: usize,
    tau: f64,
) -> Result<Vec<DetectionEvent>> {
    let cal = calibrate_series(detector, series, calibration_length)?;
    run_calibrated(series, detector, &cal, tau)
}

/// Like [`run_detector`] with a precomputed calibration.
pub fn run_calibrated(
    series: &DeltaSeries,
    detector: &Detector,
    cal: &Calibration,
    tau: f64,
) -> Result<Vec<DetectionEvent>> {
    let scores = score_series(detector, series, cal)?;
    Ok(scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tau)
        .map(|(index, &score)| DetectionEvent {
            index,
            timestamp: series.timestamp(index),
            score,
            threshold: tau,
            detector: detector.name().to_string(),
        })
        .collect())
}

/// Score of one stream sample once the detector is past its calibration prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPoint {
    pub index: usize,
    pub score: f64,
    pub flagged: bool,
}

/// Incremental detector fed one encoded value at a time.
///
/// Memory is bounded by the detector's history (one value for persistence).
#[derive(Debug, Clone)]
pub struct StreamingDetector {
    detector: Detector,
    tau: f64,
    calibration_length: usize,
    calibration: Option<Calibration>,
    running_max: f64,
    history: VecDeque<f64>,
    next_index: usize,
}

impl StreamingDetector {
    pub fn new(detector: Detector, calibration_length: usize, tau: f64) -> Result<Self> {
        if calibration_length < detector.history() + 1 {
            return Err(Error::InsufficientHistory {
                needed: detector.history() + 1,
                available: calibration_length,
            });
        }
        Ok(Self {
            history: VecDeque::with_capacity(detector.history()),
            detector,
            tau,
            calibration_length,
            calibration: None,
            running_max: 0.0,
            next_index: 0,
        })
    }

    /// Uses a fixed calibration instead of deriving one from the prefix.
    pub fn with_calibration(mut self, cal: Calibration) -> Self {
        self.calibration_length = cal.calibration_length.max(self.detector.history());
        self.calibration = Some(cal);
        self
    }

    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Index the next pushed value will get.
    pub fn next_index(&self) -> usize {
        self.next_index
    }

    /// Consumes the next encoded value (index 0 is the seed level).
    pub fn push(&mut self, encoded: f64) -> Result<Option<ScoredPoint>> {
        let t = self.next_index;
        self.next_index += 1;
        if t == 0 {
            return Ok(None);
        }
        let h = self.detector.history();
        if self.history.len() == h {
            self.history.pop_front();
        }
        self.history.push_back(encoded);
        let window = self.history.make_contiguous();

        if t < self.calibration_length {
            if self.calibration.is_none() && window.len() == h {
                self.running_max = self.running_max.max(self.detector.raw_score(window)?);
            }
            return Ok(None);
        }
        if self.calibration.is_none() {
            self.calibration = Some(Calibration::new(self.running_max, self.calibration_length)?);
        }
        let cal = self.calibration.as_ref().expect("set above");
        let score = cal.normalize(self.detector.raw_score(window)?);
        Ok(Some(ScoredPoint {
            index: t,
            score,
            flagged: score > self.tau,
        }))
    }
}
