//! Detection, sampling and classification over a point stream, plus the
//! equivalent batch computation over a complete series.

use std::collections::VecDeque;
use std::sync::Arc;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::detect::{calibrate_series, run_calibrated, Calibration, DetectionEvent, Detector, StreamingDetector};
use crate::error::{Error, Result};
use crate::evm::{EvmModel, Mode};
use crate::features::extract_features;
use crate::labels::EventClass;
use crate::sampler::{sample_backward, sample_forward, Direction, EventSample, SamplerConfig};
use crate::series::{delta_encode, LoadPoint, RawSeries};

use super::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FlexibilityActivation,
    NormalBehavior,
    Unknown,
}

/// Classification of one event sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub direction: Direction,
    pub start: usize,
    pub end: usize,
    pub early_stop: Option<usize>,
    /// `None` when the sample was rejected as unknown.
    pub label: Option<EventClass>,
    pub probability: f64,
}

/// A detection with both of its classified samples. A sample that could not
/// be cut (series boundary or end of stream) is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedEvent {
    pub index: usize,
    pub timestamp: DateTime<Utc>,
    pub score: f64,
    pub backward: Option<SampleVerdict>,
    pub forward: Option<SampleVerdict>,
    pub verdict: Verdict,
}

/// FA if any sample is FA, normal if every available sample is NO, unknown otherwise.
pub fn fuse(samples: &[Option<&SampleVerdict>]) -> Verdict {
    let labels: Vec<Option<EventClass>> = samples.iter().flatten().map(|s| s.label).collect();
    if labels.contains(&Some(EventClass::Fa)) {
        Verdict::FlexibilityActivation
    } else if !labels.is_empty() && labels.iter().all(|l| *l == Some(EventClass::No)) {
        Verdict::NormalBehavior
    } else {
        Verdict::Unknown
    }
}

/// EVM plus the settings needed to featurize a sample.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub model: Arc<EvmModel>,
    pub mode: Mode,
    pub zero_epsilon: f64,
}

impl Classifier {
    pub fn classify(&self, sample: &EventSample) -> Result<SampleVerdict> {
        let f = extract_features(&sample.deltas, self.zero_epsilon)?;
        let p = self.model.predict_features(&f, self.mode)?;
        Ok(SampleVerdict {
            direction: sample.direction,
            start: sample.start,
            end: sample.end,
            early_stop: sample.early_stop,
            label: p.label,
            probability: p.probability,
        })
    }
}

fn identified(index: usize, timestamp: DateTime<Utc>, score: f64, b: Option<SampleVerdict>, f: Option<SampleVerdict>) -> IdentifiedEvent {
    let verdict = fuse(&[b.as_ref(), f.as_ref()]);
    IdentifiedEvent {
        index,
        timestamp,
        score,
        backward: b,
        forward: f,
        verdict,
    }
}

/// Runs detection and identification over a complete series.
pub fn identify_batch(
    series: &RawSeries,
    cfg: &PipelineConfig,
    classifier: &Classifier,
    calibration: Option<Calibration>,
) -> Result<Vec<IdentifiedEvent>> {
    let detections = detect_batch(series, cfg, calibration)?;
    let deltas = delta_encode(series);
    let values = deltas.values();
    let indices: Vec<usize> = detections.iter().map(|d| d.index).collect();
    let cut = |r: Result<EventSample>| -> Result<Option<SampleVerdict>> {
        match r {
            Ok(s) => classifier.classify(&s).map(Some),
            Err(Error::Boundary { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    detections
        .iter()
        .map(|d| {
            let b = cut(sample_backward(values, d.index, &cfg.sampler))?;
            let f = cut(sample_forward(values, d.index, &cfg.sampler, &indices))?;
            Ok(identified(d.index, d.timestamp, d.score, b, f))
        })
        .collect()
}

/// Flags every point of `series` above the configured threshold.
pub fn detect_batch(series: &RawSeries, cfg: &PipelineConfig, calibration: Option<Calibration>) -> Result<Vec<DetectionEvent>> {
    let detector = Detector::from_config(&cfg.detector)?;
    let deltas = delta_encode(series);
    let cal = match calibration {
        Some(c) => c,
        None => calibrate_series(
            &detector,
            &deltas,
            cfg.detector.calibration_length(series.step().num_seconds()),
        )?,
    };
    run_calibrated(&deltas, &detector, &cal, cfg.detector.tau)
}

#[derive(Debug, Clone)]
enum Slot {
    Waiting,
    Done(Option<SampleVerdict>),
}

#[derive(Debug, Clone)]
struct Pending {
    index: usize,
    timestamp: DateTime<Utc>,
    score: f64,
    backward: Slot,
    forward: Slot,
    /// Resolved forward span end and early stop.
    forward_end: Option<(usize, Option<usize>)>,
}

impl Pending {
    fn complete(&self) -> bool {
        matches!((&self.backward, &self.forward), (Slot::Done(_), Slot::Done(_)))
    }

    fn into_event(self) -> IdentifiedEvent {
        let take = |s: Slot| match s {
            Slot::Done(v) => v,
            Slot::Waiting => None,
        };
        identified(self.index, self.timestamp, self.score, take(self.backward), take(self.forward))
    }
}

/// Output of one stream step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamOutput {
    pub detections: Vec<DetectionEvent>,
    pub events: Vec<IdentifiedEvent>,
    /// Input rows that were dropped, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

impl StreamOutput {
    fn append(&mut self, other: StreamOutput) {
        self.detections.extend(other.detections);
        self.events.extend(other.events);
        self.skipped.extend(other.skipped);
    }
}

/// Incremental pipeline. Raw points are delta-encoded on arrival, scored,
/// and every flagged point is classified once both its samples are complete.
/// Events leave in detection order.
#[derive(Debug)]
pub struct StreamEngine {
    cfg: PipelineConfig,
    classifier: Option<Classifier>,
    calibration: Option<Calibration>,
    detector: Option<StreamingDetector>,
    first: Option<LoadPoint>,
    start: Option<DateTime<Utc>>,
    step: Option<TimeDelta>,
    last_time: Option<DateTime<Utc>>,
    last_value: Option<f64>,
    next_index: usize,
    buffer: VecDeque<f64>,
    buffer_offset: usize,
    pending: VecDeque<Pending>,
}

impl StreamEngine {
    /// Without a classifier the engine only reports detections.
    pub fn new(cfg: PipelineConfig, classifier: Option<Classifier>, calibration: Option<Calibration>) -> Result<Self> {
        cfg.validate()?;
        Detector::from_config(&cfg.detector)?;
        Ok(Self {
            cfg,
            classifier,
            calibration,
            detector: None,
            first: None,
            start: None,
            step: None,
            last_time: None,
            last_value: None,
            next_index: 0,
            buffer: VecDeque::new(),
            buffer_offset: 0,
            pending: VecDeque::new(),
        })
    }

    pub fn points_seen(&self) -> usize {
        self.next_index + usize::from(self.first.is_some())
    }

    /// Parses and consumes one `timestamp,load_kw` line. Headers, blank and
    /// malformed lines are skipped.
    pub fn push_line(&mut self, line: &str) -> Result<StreamOutput> {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return Ok(StreamOutput::default());
        }
        match crate::series::parse_point_line(trimmed) {
            Some(p) => self.push(p),
            None if trimmed.to_ascii_lowercase().starts_with("timestamp") => Ok(StreamOutput::default()),
            None => {
                tracing::warn!(line = trimmed, "skipping malformed input row");
                Ok(StreamOutput {
                    skipped: vec![format!("malformed row: {trimmed}")],
                    ..StreamOutput::default()
                })
            }
        }
    }

    pub fn push_lines<'a>(&mut self, lines: impl IntoIterator<Item = &'a str>) -> Result<StreamOutput> {
        let mut out = StreamOutput::default();
        for l in lines {
            out.append(self.push_line(l)?);
        }
        Ok(out)
    }

    pub fn push(&mut self, p: LoadPoint) -> Result<StreamOutput> {
        if let Some(last) = self.last_time.or(self.first.map(|f| f.timestamp)) {
            if p.timestamp <= last {
                let msg = format!("timestamp {} not after {}", p.timestamp, last);
                tracing::warn!("skipping row: {msg}");
                return Ok(StreamOutput {
                    skipped: vec![msg],
                    ..StreamOutput::default()
                });
            }
        }
        let Some(first) = self.first else {
            if self.start.is_none() {
                self.first = Some(p);
                return Ok(StreamOutput::default());
            }
            return self.consume(p);
        };
        // the second point fixes the step, and with it the calibration length
        self.first = None;
        let step = p.timestamp - first.timestamp;
        self.start = Some(first.timestamp);
        self.step = Some(step);
        let detector = Detector::from_config(&self.cfg.detector)?;
        let cal_len = self.cfg.detector.calibration_length(step.num_seconds());
        let mut sd = StreamingDetector::new(detector, cal_len, self.cfg.detector.tau)?;
        if let Some(c) = self.calibration {
            sd = sd.with_calibration(c);
        }
        self.detector = Some(sd);
        let mut out = self.consume(first)?;
        out.append(self.consume(p)?);
        Ok(out)
    }

    fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start.expect("started") + self.step.expect("started") * i as i32
    }

    fn consume(&mut self, p: LoadPoint) -> Result<StreamOutput> {
        let t = self.next_index;
        self.next_index += 1;
        self.last_time = Some(p.timestamp);
        let encoded = match self.last_value.replace(p.load_kw) {
            None => p.load_kw,
            Some(prev) => p.load_kw - prev,
        };
        self.buffer.push_back(encoded);
        let sp = self.detector.as_mut().expect("started").push(encoded)?;
        let (w, e) = (self.cfg.sampler.window, self.cfg.sampler.extension);

        let mut out = StreamOutput::default();
        if let Some(sp) = sp.filter(|s| s.flagged) {
            out.detections.push(DetectionEvent {
                index: t,
                timestamp: self.timestamp(t),
                score: sp.score,
                threshold: self.cfg.detector.tau,
                detector: self.detector.as_ref().expect("started").detector().name().to_string(),
            });
            if self.classifier.is_some() {
                for q in self.pending.iter_mut().filter(|q| q.forward_end.is_none()) {
                    if t <= q.index + w {
                        q.forward_end = Some(((t + e).min(q.index + w), Some(t - q.index)));
                    }
                }
                self.pending.push_back(Pending {
                    index: t,
                    timestamp: self.timestamp(t),
                    score: sp.score,
                    backward: Slot::Waiting,
                    forward: Slot::Waiting,
                    forward_end: None,
                });
            }
        }

        if let Some(classifier) = self.classifier.clone() {
            for i in 0..self.pending.len() {
                let q = &self.pending[i];
                let (idx, fe) = (q.index, q.forward_end);
                if fe.is_none() && t == idx + w {
                    self.pending[i].forward_end = Some((idx + w, None));
                }
                if matches!(self.pending[i].backward, Slot::Waiting) && t == idx + e {
                    let v = self.cut(&classifier, idx, Direction::Backward, idx as i64 - w as i64, idx + e, None)?;
                    self.pending[i].backward = Slot::Done(v);
                }
                if let (Slot::Waiting, Some((end, stop))) = (&self.pending[i].forward, self.pending[i].forward_end) {
                    if t >= end {
                        let v = self.cut(&classifier, idx, Direction::Forward, idx as i64 - e as i64, end, stop)?;
                        self.pending[i].forward = Slot::Done(v);
                    }
                }
            }
            while self.pending.front().is_some_and(Pending::complete) {
                out.events.push(self.pending.pop_front().expect("non-empty").into_event());
            }
        }

        let keep = 2 * w + e + 2;
        while self.buffer.len() > keep {
            self.buffer.pop_front();
            self.buffer_offset += 1;
        }
        Ok(out)
    }

    fn cut(
        &self,
        classifier: &Classifier,
        origin: usize,
        direction: Direction,
        start: i64,
        end: usize,
        early_stop: Option<usize>,
    ) -> Result<Option<SampleVerdict>> {
        if start < 0 {
            return Ok(None);
        }
        let start = start as usize;
        debug_assert!(start >= self.buffer_offset, "sample start evicted from buffer");
        let deltas: Vec<f64> = self
            .buffer
            .range(start - self.buffer_offset..=end - self.buffer_offset)
            .copied()
            .collect();
        let sample = EventSample {
            origin,
            direction,
            start,
            end,
            early_stop,
            deltas,
            label: None,
        };
        classifier.classify(&sample).map(Some)
    }

    /// Flushes detections whose samples can no longer be completed.
    pub fn finish(&mut self) -> StreamOutput {
        let mut out = StreamOutput::default();
        // a lone point never produced a detector; nothing to flush
        out.events.extend(self.pending.drain(..).map(Pending::into_event));
        out
    }

    pub fn sampler(&self) -> &SamplerConfig {
        &self.cfg.sampler
    }
}
