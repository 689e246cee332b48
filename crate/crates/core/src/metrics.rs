//! Event-window labeling, F1 scores, AUCPR, detection delay, the FAD score and
//! dataset openness.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::EventClass;

/// Samples by which the event window is extended before the labeled start.
pub const PRE_WINDOW: usize = 2;
/// Rebound window length as a multiple of the event length.
pub const REBOUND_FACTOR: usize = 3;

/// A labeled event `[start, end]` (inclusive sample indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventWindow {
    pub start: usize,
    pub end: usize,
}

impl EventWindow {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end < start {
            return Err(Error::Label(format!("event end {end} precedes start {start}")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn extended_start(&self) -> usize {
        self.start.saturating_sub(PRE_WINDOW)
    }

    /// Inclusive rebound span, or `None` when it lies past `stream_len`.
    pub fn rebound(&self, stream_len: usize) -> Option<(usize, usize)> {
        let first = self.end + 1;
        let last = (self.end + REBOUND_FACTOR * self.len()).min(stream_len.saturating_sub(1));
        (first <= last).then_some((first, last))
    }
}

/// Counts from labeling a set of detections against event windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    /// First detection inside each event window, in event order.
    pub first_detection: Vec<Option<usize>>,
    pub events: Vec<EventWindow>,
}

impl DetectionOutcome {
    /// Delay in samples of each detected event (zero inside the pre-window).
    pub fn delays(&self) -> impl Iterator<Item = usize> + '_ {
        self.events
            .iter()
            .zip(&self.first_detection)
            .filter_map(|(e, d)| d.map(|t| t.saturating_sub(e.start)))
    }

    pub fn scores(&self) -> BinaryScores {
        binary_scores(self.tp, self.fn_, self.fp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Zone {
    Outside,
    Event(usize),
    Rebound,
}

fn zones(events: &[EventWindow], len: usize) -> Result<(Vec<Zone>, Vec<EventWindow>)> {
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|e| (e.start, e.end));
    for w in sorted.windows(2) {
        if w[1].extended_start() <= w[0].end {
            return Err(Error::Label(format!(
                "extended event windows [{}, {}] and [{}, {}] overlap",
                w[0].extended_start(),
                w[0].end,
                w[1].extended_start(),
                w[1].end
            )));
        }
    }
    if let Some(e) = sorted.iter().find(|e| e.end >= len) {
        return Err(Error::Label(format!("event [{}, {}] exceeds stream length {len}", e.start, e.end)));
    }
    let mut zone = vec![Zone::Outside; len];
    for e in &sorted {
        if let Some((a, b)) = e.rebound(len) {
            zone[a..=b].fill(Zone::Rebound);
        }
    }
    for (i, e) in sorted.iter().enumerate() {
        zone[e.extended_start()..=e.end].fill(Zone::Event(i));
    }
    Ok((zone, sorted))
}

/// Labels `detections` (flagged indices) over a stream of `len` points.
pub fn label_detections(events: &[EventWindow], detections: &[usize], len: usize) -> Result<DetectionOutcome> {
    label_detections_from(events, detections, len, 0)
}

/// As [`label_detections`], but points before `eval_start` enter neither FP
/// nor TN (used to exclude the calibration prefix).
pub fn label_detections_from(
    events: &[EventWindow],
    detections: &[usize],
    len: usize,
    eval_start: usize,
) -> Result<DetectionOutcome> {
    let (zone, sorted) = zones(events, len)?;
    let mut flagged = vec![false; len];
    for &d in detections {
        if d >= len {
            return Err(Error::Label(format!("detection {d} outside stream of length {len}")));
        }
        flagged[d] = true;
    }
    let mut first = vec![None; sorted.len()];
    let (mut fp, mut tn) = (0, 0);
    for (t, z) in zone.iter().enumerate() {
        match *z {
            Zone::Event(i) if flagged[t] && first[i].is_none() => first[i] = Some(t),
            Zone::Outside if t >= eval_start => {
                if flagged[t] {
                    fp += 1;
                } else {
                    tn += 1;
                }
            }
            _ => {}
        }
    }
    let tp = first.iter().filter(|d| d.is_some()).count();
    Ok(DetectionOutcome {
        tp,
        fn_: sorted.len() - tp,
        fp,
        tn,
        first_detection: first,
        events: sorted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 with every `0/0` taken as 0.
pub fn binary_scores(tp: usize, fn_: usize, fp: usize) -> BinaryScores {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    BinaryScores { precision, recall, f1 }
}

/// Macro F1 over the `known` classes. `pairs` holds (true class, predicted
/// label) with `None` for a rejected sample. Unknown classes never
/// contribute a per-class term.
pub fn macro_f1(known: &[EventClass], pairs: &[(EventClass, Option<EventClass>)]) -> f64 {
    if known.is_empty() {
        return 0.0;
    }
    let total: f64 = known
        .iter()
        .map(|&c| {
            let tp = pairs.iter().filter(|(t, p)| *t == c && *p == Some(c)).count();
            let fp = pairs.iter().filter(|(t, p)| *t != c && *p == Some(c)).count();
            let fn_ = pairs.iter().filter(|(t, p)| *t == c && *p != Some(c)).count();
            binary_scores(tp, fn_, fp).f1
        })
        .sum();
    total / known.len() as f64
}

/// Area under the precision-recall curve of a per-point score stream.
///
/// Each distinct finite score `v` defines a labeling with the points whose
/// score is `>= v` flagged. Thresholds with no flagged event-or-FP point have
/// no precision and are skipped. The curve starts at recall 0 with the
/// precision of the highest threshold and is integrated by trapezoids.
pub fn aucpr(scores: &[f64], events: &[EventWindow]) -> Result<f64> {
    aucpr_from(scores, events, 0)
}

pub fn aucpr_from(scores: &[f64], events: &[EventWindow], eval_start: usize) -> Result<f64> {
    if events.is_empty() {
        return Err(Error::Metric("AUCPR needs at least one event".into()));
    }
    let (zone, sorted) = zones(events, scores.len())?;
    let mut event_max = vec![f64::NEG_INFINITY; sorted.len()];
    let mut outside = Vec::new();
    for (t, z) in zone.iter().enumerate() {
        match *z {
            Zone::Event(i) => event_max[i] = event_max[i].max(scores[t]),
            Zone::Outside if t >= eval_start => outside.push(scores[t]),
            _ => {}
        }
    }
    let mut thresholds: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    event_max.sort_by(|a, b| b.total_cmp(a));
    outside.sort_by(|a, b| b.total_cmp(a));

    let n_events = sorted.len();
    let (mut ie, mut io) = (0, 0);
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for v in thresholds {
        while ie < event_max.len() && event_max[ie] >= v {
            ie += 1;
        }
        while io < outside.len() && outside[io] >= v {
            io += 1;
        }
        if ie + io == 0 {
            continue;
        }
        curve.push((ie as f64 / n_events as f64, ie as f64 / (ie + io) as f64));
    }
    Ok(integrate_pr(&curve))
}

/// Trapezoidal area of `(recall, precision)` points ordered by threshold.
pub fn integrate_pr(curve: &[(f64, f64)]) -> f64 {
    let Some(&(_, p0)) = curve.first() else {
        return 0.0;
    };
    let mut prev = (0.0, p0);
    let mut area = 0.0;
    for &(r, p) in curve {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    area
}

/// Mean delay in minutes over detected events.
pub fn detection_delay(outcome: &DetectionOutcome, step_minutes: f64) -> Result<f64> {
    let delays: Vec<usize> = outcome.delays().collect();
    if delays.is_empty() {
        return Err(Error::Metric("no detected events, delay undefined".into()));
    }
    Ok(delays.iter().sum::<usize>() as f64 / delays.len() as f64 * step_minutes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpPenalty {
    /// `-gamma * upsilon * (1 - exp(-FP / upsilon))`.
    #[default]
    Marginal,
    /// `-(gamma * exp(-FP / upsilon) + nu)`.
    Literal,
}

impl std::str::FromStr for FpPenalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "marginal" => Ok(FpPenalty::Marginal),
            "literal" => Ok(FpPenalty::Literal),
            other => Err(Error::Config(format!("unknown fp penalty {other:?} (literal|marginal)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FadParams {
    pub xi: f64,
    pub eta: f64,
    pub gamma: f64,
    pub upsilon: f64,
    pub nu: f64,
    pub fp_penalty: FpPenalty,
}

impl Default for FadParams {
    fn default() -> Self {
        Self {
            xi: 1.0,
            eta: 1.0,
            gamma: 0.05,
            upsilon: 10_000.0,
            nu: 0.0,
            fp_penalty: FpPenalty::Marginal,
        }
    }
}

impl FadParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("xi", self.xi), ("eta", self.eta), ("gamma", self.gamma), ("upsilon", self.upsilon)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu must be non-negative, got {}", self.nu)));
        }
        Ok(())
    }

    /// Signed FP contribution.
    pub fn fp_contribution(&self, fp: usize) -> f64 {
        let decay = (-(fp as f64) / self.upsilon).exp();
        match self.fp_penalty {
            FpPenalty::Marginal => -self.gamma * self.upsilon * (1.0 - decay),
            FpPenalty::Literal => -(self.gamma * decay + self.nu),
        }
    }

    /// Score of one event detected at `t_det`, linear from `xi` at the start to 0 at the end.
    pub fn event_score(&self, event: &EventWindow, t_det: usize) -> f64 {
        if event.end == event.start {
            return self.xi;
        }
        let t = t_det.max(event.start);
        let s = self.xi * event.end.saturating_sub(t) as f64 / (event.end - event.start) as f64;
        s.clamp(0.0, self.xi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadScore {
    pub fad: f64,
    pub fad_norm: f64,
    pub tp_contribution: f64,
    pub fn_contribution: f64,
    pub fp_contribution: f64,
}

/// FAD score of an outcome and its normalization between the no-detection
/// and the perfect-detection score (both without false positives).
pub fn fad_score(outcome: &DetectionOutcome, params: &FadParams) -> Result<FadScore> {
    params.validate()?;
    let tp_contribution: f64 = outcome
        .events
        .iter()
        .zip(&outcome.first_detection)
        .filter_map(|(e, d)| d.map(|t| params.event_score(e, t)))
        .sum();
    let fn_contribution = -params.eta * outcome.fn_ as f64;
    let fp_contribution = params.fp_contribution(outcome.fp);
    let fad = tp_contribution + fn_contribution + fp_contribution;
    let n = outcome.events.len() as f64;
    let fp0 = params.fp_contribution(0);
    let null = -params.eta * n + fp0;
    let opt = params.xi * n + fp0;
    let fad_norm = if opt > null { (fad - null) / (opt - null) } else { 0.0 };
    Ok(FadScore {
        fad,
        fad_norm,
        tp_contribution,
        fn_contribution,
        fp_contribution,
    })
}

/// Openness `1 - sqrt(2 * train / (test + target))`.
pub fn openness(n_train: usize, n_test: usize, n_target: usize) -> Result<f64> {
    if n_train == 0 || n_test == 0 || n_target == 0 {
        return Err(Error::Domain("class counts must be at least 1".into()));
    }
    let arg = 2.0 * n_train as f64 / (n_test + n_target) as f64;
    if arg > 1.0 {
        return Err(Error::Domain(format!(
            "openness undefined for train={n_train}, test={n_test}, target={n_target}"
        )));
    }
    Ok(1.0 - arg.sqrt())
}

/// One threshold of a detection sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fad: f64,
    pub fad_norm: f64,
    /// Empty when nothing was detected.
    pub delay_min: Option<f64>,
}

impl SweepRow {
    pub fn from_outcome(tau: f64, outcome: &DetectionOutcome, fad: &FadParams, step_minutes: f64) -> Result<Self> {
        let s = outcome.scores();
        let f = fad_score(outcome, fad)?;
        Ok(Self {
            tau,
            tp: outcome.tp,
            fn_: outcome.fn_,
            fp: outcome.fp,
            tn: outcome.tn,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            fad: f.fad,
            fad_norm: f.fad_norm,
            delay_min: detection_delay(outcome, step_minutes).ok(),
        })
    }
}

pub const SWEEP_CSV_HEADER: &str = "tau,tp,fn,fp,tn,precision,recall,f1,fad,fad_norm,delay_min";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    if rows.is_empty() {
        w.write_record(SWEEP_CSV_HEADER.split(',')).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                row: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(s: usize, e: usize) -> EventWindow {
        EventWindow::new(s, e).unwrap()
    }

    #[test]
    fn windows() {
        let e = ev(10, 20);
        assert_eq!(e.len(), 11);
        assert_eq!(e.extended_start(), 8);
        assert_eq!(e.rebound(1000), Some((21, 53)));
        assert_eq!(e.rebound(30), Some((21, 29)));
        assert_eq!(e.rebound(21), None);
        assert_eq!(ev(1, 3).extended_start(), 0);
        assert!(EventWindow::new(5, 4).is_err());
    }

    #[test]
    fn pre_window_detection_is_tp_with_zero_delay() {
        let o = label_detections(&[ev(10, 20)], &[8], 100).unwrap();
        assert_eq!((o.tp, o.fn_, o.fp), (1, 0, 0));
        assert_eq!(o.first_detection, vec![Some(8)]);
        assert_eq!(o.delays().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn later_detections_in_window_ignored() {
        let o = label_detections(&[ev(10, 20)], &[12, 15], 100).unwrap();
        assert_eq!((o.tp, o.fp), (1, 0));
        assert_eq!(o.first_detection, vec![Some(12)]);
    }

    #[test]
    fn rebound_detection_neither_tp_nor_fp() {
        // N = 11, rebound through 20 + 33 = 53
        let o = label_detections(&[ev(10, 20)], &[25, 53], 100).unwrap();
        assert_eq!((o.tp, o.fn_, o.fp), (0, 1, 0));
        let o = label_detections(&[ev(10, 20)], &[54], 100).unwrap();
        assert_eq!(o.fp, 1);
        // 100 points: 13 event, 33 rebound, 54 outside
        assert_eq!(o.tn + o.fp, 54);
    }

    #[test]
    fn event_window_beats_previous_rebound() {
        let o = label_detections(&[ev(10, 12), ev(16, 18)], &[14], 40).unwrap();
        assert_eq!(o.first_detection, vec![None, Some(14)]);
    }

    #[test]
    fn overlapping_extended_windows_rejected() {
        assert!(matches!(label_detections(&[ev(10, 20), ev(22, 30)], &[], 100), Err(Error::Label(_))));
        assert!(label_detections(&[ev(10, 20), ev(23, 30)], &[], 100).is_ok());
        assert!(label_detections(&[ev(10, 20)], &[100], 100).is_err());
    }

    #[test]
    fn eval_start_excludes_prefix() {
        let o = label_detections_from(&[ev(50, 55)], &[3, 40], 100, 10).unwrap();
        assert_eq!(o.fp, 1);
        assert_eq!(o.fp + o.tn, 100 - 10 - 8 - 18);
    }

    #[test]
    fn f1_examples() {
        let s = binary_scores(5, 0, 0);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = binary_scores(191, 14, 498);
        assert!((s.precision - 0.2772).abs() < 5e-5);
        assert!((s.recall - 0.9317).abs() < 5e-5);
        assert!((s.f1 - 0.4273).abs() < 5e-5);
        assert_eq!(binary_scores(0, 0, 0).f1, 0.0);
        assert_eq!(binary_scores(0, 3, 0).f1, 0.0);
    }

    #[test]
    fn macro_f1_over_known_classes() {
        use EventClass::*;
        let known = [Fa, No];
        let perfect = [(Fa, Some(Fa)), (No, Some(No)), (Fv, None), (Du, None)];
        assert_eq!(macro_f1(&known, &perfect), 1.0);
        // an unknown accepted as FA costs FA precision only
        let pairs = [(Fa, Some(Fa)), (No, Some(No)), (Fv, Some(Fa))];
        let fa = binary_scores(1, 0, 1).f1;
        assert!((macro_f1(&known, &pairs) - (fa + 1.0) / 2.0).abs() < 1e-15);
        // a rejected known sample is a false negative
        let pairs = [(Fa, None), (No, Some(No))];
        assert_eq!(macro_f1(&known, &pairs), 0.5);
    }

    /// Threshold enumeration through the point-wise labeling rules.
    fn brute_aucpr(scores: &[f64], events: &[EventWindow]) -> f64 {
        let mut ts: Vec<f64> = scores.to_vec();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let mut curve = Vec::new();
        for v in ts {
            let det: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= v).collect();
            let o = label_detections(events, &det, scores.len()).unwrap();
            if o.tp + o.fp > 0 {
                curve.push((o.tp as f64 / events.len() as f64, o.tp as f64 / (o.tp + o.fp) as f64));
            }
        }
        let mut area = 0.0;
        let mut prev = (0.0, curve[0].1);
        for (r, p) in curve {
            area += (r - prev.0) * (p + prev.1) * 0.5;
            prev = (r, p);
        }
        area
    }

    fn random_events(rng: &mut ChaCha8Rng, len: usize) -> Vec<EventWindow> {
        let mut out = Vec::new();
        let mut t = rng.random_range(0..10);
        loop {
            let n = rng.random_range(1..6);
            let s = t + PRE_WINDOW;
            if s + n >= len {
                break;
            }
            out.push(ev(s, s + n - 1));
            t = s + n + rng.random_range(1..30);
        }
        out
    }

    #[test]
    fn aucpr_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let events = random_events(&mut rng, 200);
            if events.is_empty() {
                continue;
            }
            // coarse scores force ties
            let scores: Vec<f64> = (0..200).map(|_| (rng.random_range(0..40) as f64) / 40.0).collect();
            let a = aucpr(&scores, &events).unwrap();
            let b = brute_aucpr(&scores, &events);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn aucpr_perfect_and_errors() {
        let events = [ev(10, 12), ev(50, 53)];
        let mut scores = vec![0.1; 100];
        for i in [11, 52] {
            scores[i] = 0.9;
        }
        assert_eq!(aucpr(&scores, &events).unwrap(), 1.0);
        assert!(matches!(aucpr(&scores, &[]), Err(Error::Metric(_))));
    }

    #[test]
    fn aucpr_random_scores_follow_analytic_curve() {
        // single-sample events: extended window has 3 points, rebound 3
        let len = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut events = Vec::new();
        let mut t = 10;
        while t + 10 < len {
            events.push(ev(t, t));
            t += rng.random_range(20..60);
        }
        let scores: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let got = aucpr(&scores, &events).unwrap();
        let e = events.len() as f64;
        let m = (len - 6 * events.len()) as f64;
        // precision at threshold v: E(1 - v^3) / (E(1 - v^3) + M(1 - v)); recall 1 - v^3
        let steps = 200_000;
        let mut expect = 0.0;
        for k in 0..steps {
            let v = (k as f64 + 0.5) / steps as f64;
            let q = 1.0 + v + v * v;
            expect += e * q / (e * q + m) * 3.0 * v * v / steps as f64;
        }
        // prevalence of events among scored units is the leading behaviour
        assert!(expect > e / (e + m) && expect < 3.0 * e / (3.0 * e + m));
        assert!((got - expect).abs() < 0.01, "{got} vs {expect}");
    }

    #[test]
    fn delay_examples() {
        let o = label_detections(&[ev(10, 20), ev(40, 50)], &[10, 40], 100).unwrap();
        assert_eq!(detection_delay(&o, 5.0).unwrap(), 0.0);
        let o = label_detections(&[ev(10, 20), ev(40, 50), ev(70, 80)], &[11, 43], 100).unwrap();
        assert_eq!(detection_delay(&o, 5.0).unwrap(), 10.0);
        let o = label_detections(&[ev(10, 20)], &[], 100).unwrap();
        assert!(detection_delay(&o, 5.0).is_err());
    }

    #[test]
    fn fad_examples() {
        let p = FadParams::default();
        let events = [ev(10, 20), ev(40, 50)];
        let o = label_detections(&events, &[10, 40], 100).unwrap();
        let f = fad_score(&o, &p).unwrap();
        assert_eq!((f.fad, f.fad_norm), (2.0, 1.0));
        let o = label_detections(&events, &[], 100).unwrap();
        let f = fad_score(&o, &p).unwrap();
        assert_eq!((f.fad, f.fad_norm), (-2.0, 0.0));
        assert_eq!(p.event_score(&ev(10, 20), 15), 0.5);
        assert_eq!(p.event_score(&ev(10, 10), 10), 1.0);
        assert_eq!(p.event_score(&ev(10, 20), 8), 1.0);
        assert!((p.fp_contribution(498) + 24.29).abs() < 5e-3);
        let lit = FadParams {
            fp_penalty: FpPenalty::Literal,
            ..p
        };
        assert_eq!(lit.fp_contribution(0), -0.05);
        // literal normalization includes the zero-FP penalty at both ends
        let o = label_detections(&events, &[10, 40], 100).unwrap();
        assert_eq!(fad_score(&o, &lit).unwrap().fad_norm, 1.0);
    }

    #[test]
    fn openness_values() {
        assert_eq!(openness(2, 2, 2).unwrap(), 0.0);
        assert!((openness(2, 3, 2).unwrap() - 0.1056).abs() < 5e-5);
        assert!((openness(2, 4, 2).unwrap() - 0.1835).abs() < 5e-5);
        assert!((openness(2, 5, 2).unwrap() - 0.2441).abs() < 5e-5);
        assert!(matches!(openness(3, 2, 2), Err(Error::Domain(_))));
        assert!(openness(0, 2, 2).is_err());
        let mut prev = -1.0;
        for test in 2..20 {
            let o = openness(2, test, 2).unwrap();
            assert!(o > prev);
            prev = o;
        }
    }

    #[test]
    fn sweep_csv_round_trip() {
        let o = label_detections(&[ev(10, 20)], &[12, 60], 100).unwrap();
        let rows = vec![
            SweepRow::from_outcome(0.5, &o, &FadParams::default(), 5.0).unwrap(),
            SweepRow::from_outcome(0.9, &label_detections(&[ev(10, 20)], &[], 100).unwrap(), &FadParams::default(), 5.0)
                .unwrap(),
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_CSV_HEADER);
        assert_eq!(read_sweep_csv(&buf[..]).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn fad_properties(
            n in 1usize..12,
            seed in any::<u64>(),
            fp in 0usize..50_000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let events: Vec<EventWindow> = (0..n).map(|i| {
                let s = 100 * i + 5;
                ev(s, s + rng.random_range(0..15))
            }).collect();
            let dets: Vec<Option<usize>> = events.iter().map(|e| {
                rng.random_bool(0.7).then(|| rng.random_range(e.extended_start()..=e.end))
            }).collect();
            let tp = dets.iter().flatten().count();
            let mk = |d: &[Option<usize>], fp| DetectionOutcome {
                tp: d.iter().flatten().count(),
                fn_: n - d.iter().flatten().count(),
                fp,
                tn: 0,
                first_detection: d.to_vec(),
                events: events.clone(),
            };
            let p = FadParams::default();
            let base = fad_score(&mk(&dets, fp), &p).unwrap();
            prop_assert!(base.fad_norm <= 1.0);
            if fp == 0 {
                prop_assert!((0.0..=1.0).contains(&base.fad_norm));
            }
            // adding a false positive strictly lowers the score
            prop_assert!(fad_score(&mk(&dets, fp + 1), &p).unwrap().fad < base.fad);
            if tp > 0 {
                let i = dets.iter().position(Option::is_some).unwrap();
                let mut missed = dets.clone();
                missed[i] = None;
                prop_assert!(fad_score(&mk(&missed, fp), &p).unwrap().fad < base.fad);
                let mut earlier = dets.clone();
                earlier[i] = Some(events[i].extended_start());
                prop_assert!(fad_score(&mk(&earlier, fp), &p).unwrap().fad >= base.fad);
            }
        }
    }
}
