//! Event sampling around detected points.
//!
//! A detection at index `t` yields a backward sample covering `[t - w, t + e]`
//! and a forward sample covering `[t - e, t + w]`, where `w` is the sample
//! window and `e` the extension. The forward sample stops early at the first
//! further detection `t + a` (`1 <= a <= w`) and then ends at
//! `min(t + a + e, t + w)`, so early stopping never lengthens a sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::EventClass;

/// `[sampler]` section of the pipeline configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Sample window size in samples (36 = 3 hours at 5 minutes).
    pub window: usize,
    /// Window extension in samples.
    pub extension: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            window: 36,
            extension: 3,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window <= self.extension {
            return Err(Error::Config(format!(
                "sampler.window ({}) must exceed sampler.extension ({})",
                self.window, self.extension
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Backward,
    Forward,
}

/// A contiguous slice of the encoded stream cut around a detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSample {
    pub origin: usize,
    pub direction: Direction,
    /// First index covered (inclusive).
    pub start: usize,
    /// Last index covered (inclusive).
    pub end: usize,
    /// Offset `a` of the detection that stopped forward sampling.
    pub early_stop: Option<usize>,
    pub deltas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<EventClass>,
}

impl EventSample {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

fn boundary(start: i64, end: i64, len: usize) -> Error {
    Error::Boundary { start, end, len }
}

/// Span `[t - w, t + e]` of a backward sample.
pub fn backward_span(t: usize, cfg: &SamplerConfig) -> (i64, i64) {
    (t as i64 - cfg.window as i64, (t + cfg.extension) as i64)
}

/// Span of a forward sample given the next detection after `t`, if any.
///
/// Returns `(start, end, early_stop)`; detections beyond `t + w` are ignored.
pub fn forward_span(t: usize, cfg: &SamplerConfig, next_detection: Option<usize>) -> (i64, i64, Option<usize>) {
    let start = t as i64 - cfg.extension as i64;
    let full_end = (t + cfg.window) as i64;
    match next_detection.filter(|&d| d > t && d <= t + cfg.window) {
        Some(d) => {
            let a = d - t;
            (start, ((d + cfg.extension) as i64).min(full_end), Some(a))
        }
        None => (start, full_end, None),
    }
}

fn cut(series: &[f64], origin: usize, direction: Direction, span: (i64, i64), early_stop: Option<usize>) -> Result<EventSample> {
    let (start, end) = span;
    if start < 0 || end >= series.len() as i64 {
        return Err(boundary(start, end, series.len()));
    }
    let (start, end) = (start as usize, end as usize);
    Ok(EventSample {
        origin,
        direction,
        start,
        end,
        early_stop,
        deltas: series[start..=end].to_vec(),
        label: None,
    })
}

/// Backward sample `[t - w, t + e]` of the encoded stream.
pub fn sample_backward(series: &[f64], t: usize, cfg: &SamplerConfig) -> Result<EventSample> {
    cut(series, t, Direction::Backward, backward_span(t, cfg), None)
}

/// Forward sample with early stopping. `detections` must be sorted ascending.
pub fn sample_forward(series: &[f64], t: usize, cfg: &SamplerConfig, detections: &[usize]) -> Result<EventSample> {
    debug_assert!(detections.windows(2).all(|w| w[0] <= w[1]));
    let next = detections.get(detections.partition_point(|&d| d <= t)).copied();
    let (start, end, early_stop) = forward_span(t, cfg, next);
    cut(series, t, Direction::Forward, (start, end), early_stop)
}
