use std::sync::Arc;

use chrono::{TimeDelta, TimeZone, Utc};
use flexid_core::datagen::{build_classifier_dataset, generate, ScenarioConfig};
use flexid_core::evm::{EvmModel, Mode};
use flexid_core::pipeline::{
    detect_batch, identify_batch, sweep, train_evm, Classifier, PipelineConfig, StreamEngine, Verdict,
};
use flexid_core::series::{format_timestamp, RawSeries};
use flexid_core::EventClass;

fn small_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        scenario: ScenarioConfig {
            seed,
            days: 60,
            n_fa: 60,
            n_no: 60,
            n_mp: 5,
            n_fv: 30,
            n_du: 30,
            ..ScenarioConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn trained(cfg: &PipelineConfig) -> EvmModel {
    let s = generate(&cfg.scenario).unwrap();
    let ds = build_classifier_dataset(&s.series, &s.truth, &cfg.features.dataset_options()).unwrap();
    train_evm(&ds.train_vectors(), &cfg.evm, false).unwrap().0
}

#[test]
fn injected_ramp_is_identified_as_activation() {
    let cfg = small_config(5);
    let model = trained(&cfg);
    let start = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
    // smooth daily profile with one 10 kW spike in the calibration prefix,
    // then a 20-sample reduction of 30 kW with sharp edges
    let n = 4000;
    let (on, off) = (3500, 3520);
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let base = 200.0 + 20.0 * (i as f64 * std::f64::consts::TAU / 288.0).sin();
            if (on..off).contains(&i) {
                base - 30.0
            } else if i == 1000 {
                base + 10.0
            } else {
                base
            }
        })
        .collect();
    let series = RawSeries::new(start, TimeDelta::minutes(5), values).unwrap();
    let classifier = Classifier {
        model: Arc::new(model),
        mode: Mode::Open,
        zero_epsilon: 0.0,
    };
    let events = identify_batch(&series, &cfg, &classifier, None).unwrap();
    let first = events.first().expect("the ramp is detected");
    assert_eq!(first.index, on);
    assert!(first.backward.is_some() && first.forward.is_some());
    assert_eq!(first.verdict, Verdict::FlexibilityActivation);
    // the only other flag is the return edge
    assert!(events.iter().all(|e| e.index == on || e.index == off));
}

#[test]
fn stream_of_csv_lines_matches_batch() {
    let cfg = small_config(9);
    let model = Arc::new(trained(&cfg));
    let s = generate(&ScenarioConfig {
        seed: 77,
        ..cfg.scenario.clone()
    })
    .unwrap();
    let classifier = Classifier {
        model,
        mode: Mode::Open,
        zero_epsilon: 0.0,
    };
    let batch = identify_batch(&s.series, &cfg, &classifier, None).unwrap();

    let mut engine = StreamEngine::new(cfg.clone(), Some(classifier), None).unwrap();
    let mut streamed = engine.push_line("timestamp,load_kw").unwrap().events;
    for (i, v) in s.series.values().iter().enumerate() {
        let line = format!("{},{}", format_timestamp(s.series.timestamp(i)), v);
        streamed.extend(engine.push_line(&line).unwrap().events);
    }
    streamed.extend(engine.finish().events);
    assert!(!batch.is_empty());
    assert_eq!(streamed, batch);
}

#[test]
fn detection_only_stream_matches_batch() {
    let cfg = small_config(3);
    let s = generate(&cfg.scenario).unwrap();
    let batch = detect_batch(&s.series, &cfg, None).unwrap();
    let mut engine = StreamEngine::new(cfg, None, None).unwrap();
    let mut dets = Vec::new();
    for (i, v) in s.series.values().iter().enumerate() {
        let p = flexid_core::series::LoadPoint {
            timestamp: s.series.timestamp(i),
            load_kw: *v,
        };
        let o = engine.push(p).unwrap();
        assert!(o.events.is_empty());
        dets.extend(o.detections);
    }
    assert_eq!(dets, batch);
}

#[test]
fn sweep_on_small_scenario_finds_events() {
    let cfg = small_config(11);
    let s = generate(&cfg.scenario).unwrap();
    let r = sweep(&cfg, &s.series, &s.truth).unwrap();
    assert_eq!(r.summary.n_events, 60);
    assert!(r.summary.tau_opt_fad <= r.summary.tau_opt_f1);
    let best = r.row_at(r.summary.tau_opt_fad).unwrap();
    assert!(best.tp >= 54, "{best:?}");
}

#[test]
fn model_survives_disk_round_trip() {
    let cfg = small_config(2);
    let model = trained(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = EvmModel::load(&path).unwrap();
    let s = generate(&cfg.scenario).unwrap();
    let ds = build_classifier_dataset(&s.series, &s.truth, &cfg.features.dataset_options()).unwrap();
    for t in &ds.test {
        let a = model.predict_features(&t.features, Mode::Open).unwrap();
        let b = back.predict_features(&t.features, Mode::Open).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(back.known_classes(), vec![EventClass::Fa, EventClass::No]);
}

#[test]
fn config_file_round_trip() {
    let mut cfg = PipelineConfig::default();
    cfg.detector.tau = 0.42;
    cfg.evm.rho_grid = vec![0.5, 0.9];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flexid.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap(), cfg);
}
