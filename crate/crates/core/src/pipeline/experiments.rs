//! Threshold sweep, open- vs closed-set comparison and offline evaluation.

use serde::{Deserialize, Serialize};

use crate::datagen::{ClassifierDataset, GroundTruth, KNOWN_CLASSES, UNKNOWN_CLASSES};
use crate::detect::{calibrate_series, score_series, Calibration, Detector};
use crate::error::{Error, Result};
use crate::evm::{EvmModel, Mode};
use crate::labels::EventClass;
use crate::metrics::{
    aucpr_from, detection_delay, fad_score, label_detections_from, macro_f1, openness, DetectionOutcome, FadParams,
    FadScore, SweepRow,
};
use crate::series::{delta_encode, RawSeries};

use super::config::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub detector: String,
    pub n_events: usize,
    pub f1_max: f64,
    pub tau_opt_f1: f64,
    pub fad_max: f64,
    pub fad_norm_max: f64,
    pub tau_opt_fad: f64,
    pub aucpr: f64,
    /// Mean detection delay at the FAD-optimal threshold.
    pub delay_min: Option<f64>,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

impl SweepReport {
    pub fn row_at(&self, tau: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| (r.tau - tau).abs() < 1e-12)
    }
}

/// Scores the series once and evaluates every threshold of the grid against
/// the FA events. The calibration prefix enters no count.
pub fn sweep(cfg: &PipelineConfig, series: &RawSeries, truth: &GroundTruth) -> Result<SweepReport> {
    let events = truth.fa_windows();
    if events.is_empty() {
        return Err(Error::Metric("ground truth holds no FA events".into()));
    }
    let detector = Detector::from_config(&cfg.detector)?;
    let deltas = delta_encode(series);
    let cal = calibrate_series(
        &detector,
        &deltas,
        cfg.detector.calibration_length(series.step().num_seconds()),
    )?;
    let scores = score_series(&detector, &deltas, &cal)?;
    let eval_start = cal.calibration_length.max(detector.history());
    let step_min = series.step().num_seconds() as f64 / 60.0;
    let fad = &cfg.evaluation.fad;

    let rows: Vec<SweepRow> = cfg
        .evaluation
        .tau_grid()
        .into_iter()
        .map(|tau| {
            let det: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > tau).collect();
            let o = label_detections_from(&events, &det, scores.len(), eval_start)?;
            SweepRow::from_outcome(tau, &o, fad, step_min)
        })
        .collect::<Result<_>>()?;

    // first maximum, i.e. the smallest optimal threshold
    let argmax = |key: fn(&SweepRow) -> f64| {
        rows.iter().fold(&rows[0], |best, r| if key(r) > key(best) { r } else { best })
    };
    let best_f1 = argmax(|r| r.f1);
    let best_fad = argmax(|r| r.fad);
    let summary = SweepSummary {
        detector: detector.name().into(),
        n_events: events.len(),
        f1_max: best_f1.f1,
        tau_opt_f1: best_f1.tau,
        fad_max: best_fad.fad,
        fad_norm_max: best_fad.fad_norm,
        tau_opt_fad: best_fad.tau,
        aucpr: aucpr_from(&scores, &events, eval_start)?,
        delay_min: best_fad.delay_min,
        calibration: cal,
    };
    Ok(SweepReport { rows, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpennessLevel {
    pub unknown_classes: Vec<EventClass>,
    pub openness: f64,
    pub n_test: usize,
    pub open_f1: f64,
    pub closed_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsCsReport {
    pub rho: f64,
    pub levels: Vec<OpennessLevel>,
    /// Share of FV test samples not labeled FA in open mode.
    pub fv_not_fa: f64,
    pub n_fv: usize,
}

/// Open- and closed-mode macro F1 on test sets of growing openness
/// (known classes, then adding MP, FV and DU).
pub fn os_cs_experiment(model: &EvmModel, dataset: &ClassifierDataset) -> Result<OsCsReport> {
    let known = model.known_classes();
    let predict = |mode: Mode| -> Result<Vec<(EventClass, Option<EventClass>)>> {
        dataset
            .test
            .iter()
            .map(|s| Ok((s.event.class, model.predict_features(&s.features, mode)?.label)))
            .collect()
    };
    let open = predict(Mode::Open)?;
    let closed = predict(Mode::Closed)?;
    let mut levels = Vec::new();
    for k in 0..=UNKNOWN_CLASSES.len() {
        let mut included: Vec<EventClass> = KNOWN_CLASSES.to_vec();
        included.extend_from_slice(&UNKNOWN_CLASSES[..k]);
        let pick = |pairs: &[(EventClass, Option<EventClass>)]| -> Vec<(EventClass, Option<EventClass>)> {
            pairs.iter().copied().filter(|(t, _)| included.contains(t)).collect()
        };
        let o = pick(&open);
        levels.push(OpennessLevel {
            unknown_classes: UNKNOWN_CLASSES[..k].to_vec(),
            openness: openness(known.len(), known.len() + k, known.len())?,
            n_test: o.len(),
            open_f1: macro_f1(&known, &o),
            closed_f1: macro_f1(&known, &pick(&closed)),
        });
    }
    let fv: Vec<_> = open.iter().filter(|(t, _)| *t == EventClass::Fv).collect();
    let fv_not_fa = if fv.is_empty() {
        0.0
    } else {
        fv.iter().filter(|(_, p)| *p != Some(EventClass::Fa)).count() as f64 / fv.len() as f64
    };
    Ok(OsCsReport {
        rho: model.params.rho,
        levels,
        fv_not_fa,
        n_fv: fv.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub outcome: DetectionOutcome,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fad: FadScore,
    pub delay_min: Option<f64>,
}

/// Scores a set of detected indices against the FA events of `truth`.
pub fn evaluate(
    detections: &[usize],
    truth: &GroundTruth,
    len: usize,
    eval_start: usize,
    fad: &FadParams,
    step_minutes: f64,
) -> Result<EvaluationReport> {
    let outcome = label_detections_from(&truth.fa_windows(), detections, len, eval_start)?;
    let s = outcome.scores();
    Ok(EvaluationReport {
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        fad: fad_score(&outcome, fad)?,
        delay_min: detection_delay(&outcome, step_minutes).ok(),
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_classifier_dataset, generate, ScenarioConfig};
    use crate::metrics::aucpr;

    fn small() -> PipelineConfig {
        PipelineConfig {
            scenario: ScenarioConfig {
                days: 40,
                n_fa: 30,
                n_no: 30,
                n_mp: 3,
                n_fv: 30,
                n_du: 30,
                ..ScenarioConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn sweep_shape_and_consistency() {
        let cfg = small();
        let s = generate(&cfg.scenario).unwrap();
        let r = sweep(&cfg, &s.series, &s.truth).unwrap();
        assert_eq!(r.rows.len(), 101);
        assert!(r.rows.windows(2).all(|w| w[1].tp <= w[0].tp && w[1].fp <= w[0].fp));
        assert_eq!(r.row_at(r.summary.tau_opt_f1).unwrap().f1, r.summary.f1_max);
        // the AUCPR in the report is the metrics one over the same scores
        let det = Detector::from_config(&cfg.detector).unwrap();
        let d = delta_encode(&s.series);
        let scores = score_series(&det, &d, &r.summary.calibration).unwrap();
        let cal_len = r.summary.calibration.calibration_length;
        let mut masked = scores.clone();
        masked[..cal_len].fill(f64::NEG_INFINITY);
        assert_eq!(aucpr_from(&scores, &s.truth.fa_windows(), cal_len).unwrap(), r.summary.aucpr);
        assert!(aucpr(&masked, &s.truth.fa_windows()).unwrap() > 0.0);
        assert!(r.summary.tau_opt_fad <= r.summary.tau_opt_f1);
    }

    #[test]
    fn os_cs_levels() {
        let cfg = small();
        let s = generate(&cfg.scenario).unwrap();
        let ds = build_classifier_dataset(&s.series, &s.truth, &cfg.features.dataset_options()).unwrap();
        let model = EvmModel::fit_features(&ds.train_vectors(), cfg.evm.params()).unwrap();
        let r = os_cs_experiment(&model, &ds).unwrap();
        assert_eq!(r.levels.len(), 4);
        assert_eq!(r.levels[0].openness, 0.0);
        assert!(r.levels.windows(2).all(|w| w[1].openness > w[0].openness && w[1].n_test > w[0].n_test));
        assert!((0.0..=1.0).contains(&r.fv_not_fa));
    }

    #[test]
    fn evaluate_counts() {
        let truth = GroundTruth {
            events: vec![crate::datagen::TruthEvent {
                class: EventClass::Fa,
                start: 10,
                end: 20,
                param: 1.0,
            }],
        };
        let r = evaluate(&[15, 90], &truth, 100, 0, &FadParams::default(), 5.0).unwrap();
        assert_eq!((r.outcome.tp, r.outcome.fp), (1, 1));
        assert_eq!(r.delay_min, Some(25.0));
        assert!((r.fad.tp_contribution - 0.5).abs() < 1e-12);
    }
}
