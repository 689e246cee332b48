//! Synthetic aggregated load with injected, labeled events of every class.

use std::io::{Read, Write};

use chrono::{DateTime, Datelike, TimeDelta, Timelike, Utc, Weekday};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector};
use crate::labels::EventClass;
use crate::series::{encode_values, parse_timestamp, RawSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub start: String,
    pub days: usize,
    pub step_minutes: u32,
    pub households: usize,
    /// Days at the beginning kept free of events.
    pub warmup_days: usize,

    pub base_mean_kw: f64,
    pub daily_amplitude_kw: f64,
    /// Relative load reduction on weekends.
    pub weekend_damping: f64,
    pub trend_kw_per_day: f64,
    pub noise_std_kw: f64,

    pub n_fa: usize,
    pub n_no: usize,
    pub n_mp: usize,
    pub n_fv: usize,
    pub n_du: usize,

    pub fa_len_min: usize,
    pub fa_len_max: usize,
    pub fa_magnitude_min: f64,
    pub fa_magnitude_max: f64,
    /// Rebound energy as a fraction of the activation energy.
    pub rebound_energy: f64,
    /// Minimum start delta of an FA event, in noise standard deviations.
    pub fa_min_start_sigmas: f64,

    pub mp_hour: u32,
    pub mp_amplitude_min: f64,
    pub mp_amplitude_max: f64,
    pub mp_len_min: usize,
    pub mp_len_max: usize,

    pub du_factor_min: f64,
    pub du_factor_max: f64,

    /// Free samples kept around every event.
    pub margin: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            start: "2017-09-15T00:00:00Z".into(),
            days: 195,
            step_minutes: 5,
            households: 450,
            warmup_days: 10,
            base_mean_kw: 200.0,
            daily_amplitude_kw: 60.0,
            weekend_damping: 0.1,
            trend_kw_per_day: 0.05,
            noise_std_kw: 6.0,
            n_fa: 205,
            n_no: 205,
            n_mp: 15,
            n_fv: 205,
            n_du: 205,
            fa_len_min: 6,
            fa_len_max: 24,
            fa_magnitude_min: 0.08,
            fa_magnitude_max: 0.20,
            rebound_energy: 0.5,
            fa_min_start_sigmas: 5.0,
            mp_hour: 8,
            mp_amplitude_min: 0.15,
            mp_amplitude_max: 0.30,
            mp_len_min: 6,
            mp_len_max: 12,
            du_factor_min: 0.4,
            du_factor_max: 0.8,
            margin: 6,
        }
    }
}

impl ScenarioConfig {
    pub fn start_time(&self) -> Result<DateTime<Utc>> {
        parse_timestamp(&self.start).ok_or_else(|| Error::Config(format!("invalid scenario start {:?}", self.start)))
    }

    pub fn samples_per_day(&self) -> usize {
        (24 * 60 / self.step_minutes.max(1)) as usize
    }

    pub fn len(&self) -> usize {
        self.days * self.samples_per_day()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.start_time()?;
        if self.step_minutes == 0 || 1440 % self.step_minutes != 0 {
            return bad(format!("step_minutes {} must divide a day", self.step_minutes));
        }
        if self.days == 0 || self.warmup_days >= self.days {
            return bad("days must exceed warmup_days".into());
        }
        if self.fa_len_min == 0 || self.fa_len_min > self.fa_len_max {
            return bad("fa_len_min must be in 1..=fa_len_max".into());
        }
        if self.mp_len_min == 0 || self.mp_len_min > self.mp_len_max {
            return bad("mp_len_min must be in 1..=mp_len_max".into());
        }
        let ranges = [
            ("fa_magnitude", self.fa_magnitude_min, self.fa_magnitude_max),
            ("mp_amplitude", self.mp_amplitude_min, self.mp_amplitude_max),
            ("du_factor", self.du_factor_min, self.du_factor_max),
        ];
        for (name, lo, hi) in ranges {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if !(self.noise_std_kw >= 0.0 && self.rebound_energy >= 0.0 && (0.0..1.0).contains(&self.weekend_damping)) {
            return bad("noise_std_kw, rebound_energy and weekend_damping out of range".into());
        }
        if self.mp_hour >= 24 {
            return bad(format!("mp_hour {} is not an hour of the day", self.mp_hour));
        }
        if self.n_fa == 0 && (self.n_no + self.n_fv + self.n_du) > 0 {
            return bad("NO, FV and DU lengths are resampled from FA lengths, so n_fa must be positive".into());
        }
        Ok(())
    }
}

/// One labeled event; `param` is the signed FA magnitude (kW), the MP
/// amplitude (kW), the frozen FV value (kW), the DU factor, or 0 for NO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub class: EventClass,
    #[serde(rename = "start_idx")]
    pub start: usize,
    #[serde(rename = "end_idx")]
    pub end: usize,
    pub param: f64,
}

impl TruthEvent {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Events ordered by start index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub events: Vec<TruthEvent>,
}

impl GroundTruth {
    pub fn of_class(&self, class: EventClass) -> impl Iterator<Item = &TruthEvent> + '_ {
        self.events.iter().filter(move |e| e.class == class)
    }

    /// Event windows of the FA events.
    pub fn fa_windows(&self) -> Vec<crate::metrics::EventWindow> {
        self.of_class(EventClass::Fa)
            .map(|e| crate::metrics::EventWindow { start: e.start, end: e.end })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        if self.events.is_empty() {
            w.write_record(["class", "start_idx", "end_idx", "param"]).map_err(io)?;
        }
        for e in &self.events {
            w.serialize(e).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut events = Vec::new();
        for (i, row) in r.deserialize::<TruthEvent>().enumerate() {
            let e = row.map_err(|e| Error::Parse {
                row: i + 2,
                message: e.to_string(),
            })?;
            if e.end < e.start {
                return Err(Error::Parse {
                    row: i + 2,
                    message: format!("end_idx {} precedes start_idx {}", e.end, e.start),
                });
            }
            events.push(e);
        }
        events.sort_by_key(|e| (e.start, e.class));
        Ok(Self { events })
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub series: RawSeries,
    pub truth: GroundTruth,
    pub config: ScenarioConfig,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Noise-free base load at sample `i`.
pub fn base_profile(cfg: &ScenarioConfig, start: DateTime<Utc>, i: usize) -> f64 {
    let t = start + TimeDelta::minutes(i as i64 * cfg.step_minutes as i64);
    let days = i as f64 * cfg.step_minutes as f64 / 1440.0;
    let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
    let daily = cfg.daily_amplitude_kw * (std::f64::consts::TAU * (hour - 8.0) / 24.0).sin();
    // hours since Wednesday 00:00, so both weekend edges fall inside one week
    let u = ((t.weekday().num_days_from_monday() as f64 + 5.0) % 7.0) * 24.0 + hour;
    let weekend = smoothstep((u - 69.0) / 6.0) - smoothstep((u - 117.0) / 6.0);
    (cfg.base_mean_kw + cfg.trend_kw_per_day * days + daily) * (1.0 - cfg.weekend_damping * weekend)
}

struct Occupancy {
    used: Vec<bool>,
    lo: usize,
}

impl Occupancy {
    fn free(&self, a: usize, b: usize) -> bool {
        a >= self.lo && b < self.used.len() && !self.used[a..=b].iter().any(|&u| u)
    }

    fn take(&mut self, a: usize, b: usize) {
        self.used[a..=b].fill(true);
    }

    /// Random start `s` whose span `[s - before, s + len - 1 + after]` is free.
    fn place(&mut self, rng: &mut ChaCha8Rng, len: usize, before: usize, after: usize, what: &str) -> Result<usize> {
        let n = self.used.len();
        let first = self.lo + before;
        let span = before + len + after;
        if first + len + after > n {
            return Err(Error::Packing(format!("horizon too short for a {what} event")));
        }
        let last = n - len - after;
        for _ in 0..200 {
            let s = rng.random_range(first..=last);
            if self.free(s - before, s + len - 1 + after) {
                self.take(s - before, s + len - 1 + after);
                return Ok(s);
            }
        }
        // dense horizon: enumerate every feasible start
        let mut run = 0usize;
        let mut feasible = Vec::new();
        for (i, &u) in self.used.iter().enumerate() {
            run = if u { 0 } else { run + 1 };
            if run >= span && i + 1 >= span {
                let a = i + 1 - span;
                if a >= self.lo {
                    feasible.push(a + before);
                }
            }
        }
        if feasible.is_empty() {
            return Err(Error::Packing(format!("no free span of {span} samples left for a {what} event")));
        }
        let s = feasible[rng.random_range(0..feasible.len())];
        self.take(s - before, s + len - 1 + after);
        Ok(s)
    }
}

pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let start = cfg.start_time()?;
    let n = cfg.len();
    let spd = cfg.samples_per_day();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let base: Vec<f64> = (0..n).map(|i| base_profile(cfg, start, i)).collect();
    let noise = Normal::new(0.0, cfg.noise_std_kw).map_err(|e| Error::Config(e.to_string()))?;
    let mut x: Vec<f64> = base.iter().map(|b| (b + noise.sample(&mut rng)).max(0.0)).collect();

    let mut occ = Occupancy {
        used: vec![false; n],
        lo: cfg.warmup_days * spd,
    };
    let m = cfg.margin;
    let mut events = Vec::new();

    // Monday peaks sit at fixed clock positions, so they are placed first
    if cfg.n_mp > 0 {
        let offset = (cfg.mp_hour as usize * 60 / cfg.step_minutes as usize) as i64;
        let candidates: Vec<usize> = (0..cfg.days)
            .filter(|d| (start + TimeDelta::days(*d as i64)).weekday() == Weekday::Mon)
            .map(|d| (d * spd) as i64 + offset - start.num_seconds_from_midnight() as i64 / 60 / cfg.step_minutes as i64)
            .filter(|&s| s >= (occ.lo + m) as i64 && (s as usize) + cfg.mp_len_max + m < n)
            .map(|s| s as usize)
            .collect();
        if candidates.len() < cfg.n_mp {
            return Err(Error::Packing(format!(
                "{} Monday peaks requested, {} Mondays available",
                cfg.n_mp,
                candidates.len()
            )));
        }
        let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), cfg.n_mp)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        picked.sort_unstable();
        for s in picked {
            let len = rng.random_range(cfg.mp_len_min..=cfg.mp_len_max);
            let amp = rng.random_range(cfg.mp_amplitude_min..=cfg.mp_amplitude_max) * base[s];
            occ.take(s - m, s + len - 1 + m);
            for j in 0..len {
                x[s + j] += amp * (1.0 - j as f64 / len as f64);
            }
            events.push(TruthEvent {
                class: EventClass::Mp,
                start: s,
                end: s + len - 1,
                param: amp,
            });
        }
    }

    let mut fa_lengths = Vec::with_capacity(cfg.n_fa);
    let min_delta = cfg.fa_min_start_sigmas * cfg.noise_std_kw;
    for _ in 0..cfg.n_fa {
        let len = rng.random_range(cfg.fa_len_min..=cfg.fa_len_max);
        let rebound = 3 * len;
        let s = occ.place(&mut rng, len, m.max(1), rebound + m, "FA")?;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut mag = rng.random_range(cfg.fa_magnitude_min..=cfg.fa_magnitude_max) * base[s];
        // the realized ramp must stand clear of the noise
        let natural = x[s] - x[s - 1];
        mag = mag.max(min_delta - sign * natural + 1e-6);
        let shift = sign * mag;
        for v in &mut x[s..s + len] {
            *v += shift;
        }
        let amp = 2.0 * cfg.rebound_energy * mag * len as f64 / (rebound as f64 + 1.0);
        for j in 0..rebound.min(n - s - len) {
            x[s + len + j] -= sign * amp * (1.0 - j as f64 / rebound as f64);
        }
        fa_lengths.push(len);
        events.push(TruthEvent {
            class: EventClass::Fa,
            start: s,
            end: s + len - 1,
            param: shift,
        });
    }

    for class in [EventClass::No, EventClass::Fv, EventClass::Du] {
        let count = match class {
            EventClass::No => cfg.n_no,
            EventClass::Fv => cfg.n_fv,
            _ => cfg.n_du,
        };
        for _ in 0..count {
            let len = fa_lengths[rng.random_range(0..fa_lengths.len())];
            let s = occ.place(&mut rng, len, m.max(1), m, class.as_str())?;
            let param = match class {
                EventClass::Fv => {
                    let v = x[s - 1];
                    x[s..s + len].fill(v);
                    v
                }
                EventClass::Du => {
                    let f = rng.random_range(cfg.du_factor_min..=cfg.du_factor_max);
                    for v in &mut x[s..s + len] {
                        *v *= f;
                    }
                    f
                }
                _ => 0.0,
            };
            events.push(TruthEvent {
                class,
                start: s,
                end: s + len - 1,
                param,
            });
        }
    }

    for v in &mut x {
        *v = v.max(0.0);
    }
    events.sort_by_key(|e| (e.start, e.class));
    let series = RawSeries::new(start, TimeDelta::minutes(cfg.step_minutes as i64), x)?;
    Ok(Scenario {
        series,
        truth: GroundTruth { events },
        config: cfg.clone(),
    })
}

/// Options for turning a labeled scenario into classifier samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    /// Samples added before and after each event.
    pub margin: usize,
    pub train_fraction: f64,
    /// Number of test samples per unknown class relative to the FA test count.
    pub unknown_ratio: f64,
    pub zero_epsilon: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            margin: 3,
            train_fraction: 0.9,
            unknown_ratio: 1.0 / 3.0,
            zero_epsilon: 0.0,
        }
    }
}

/// A labeled feature vector with the event it was sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub event: TruthEvent,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierDataset {
    /// Known classes only, time ordered.
    pub train: Vec<LabeledSample>,
    /// Held-out known samples followed by the unknown-class samples.
    pub test: Vec<LabeledSample>,
}

impl ClassifierDataset {
    pub fn train_vectors(&self) -> Vec<FeatureVector> {
        self.train.iter().map(|s| s.features).collect()
    }

    pub fn test_of(&self, classes: &[EventClass]) -> Vec<FeatureVector> {
        self.test
            .iter()
            .filter(|s| classes.contains(&s.event.class))
            .map(|s| s.features)
            .collect()
    }
}

pub const KNOWN_CLASSES: [EventClass; 2] = [EventClass::Fa, EventClass::No];
pub const UNKNOWN_CLASSES: [EventClass; 3] = [EventClass::Mp, EventClass::Fv, EventClass::Du];

/// Featurizes `[start - margin, end + margin]` of the delta-encoded series for
/// every event and splits the result in time.
pub fn build_classifier_dataset(
    series: &RawSeries,
    truth: &GroundTruth,
    opts: &DatasetOptions,
) -> Result<ClassifierDataset> {
    if truth.events.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train_fraction must lie in (0, 1), got {}",
            opts.train_fraction
        )));
    }
    let deltas = encode_values(series.values());
    let sample = |e: &TruthEvent| -> Result<LabeledSample> {
        let a = e.start as i64 - opts.margin as i64;
        let b = e.end + opts.margin;
        if a < 1 || b >= deltas.len() {
            return Err(Error::Boundary {
                start: a,
                end: b as i64,
                len: deltas.len(),
            });
        }
        let f = extract_features(&deltas[a as usize..=b], opts.zero_epsilon)?.with_label(e.class);
        Ok(LabeledSample { event: *e, features: f })
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut fa_test = 0;
    for class in KNOWN_CLASSES {
        let evs: Vec<&TruthEvent> = truth.of_class(class).collect();
        let n_train = (evs.len() as f64 * opts.train_fraction).floor() as usize;
        if evs.len() < 2 || n_train == 0 || n_train == evs.len() {
            return Err(Error::Packing(format!(
                "{} {class} events cannot be split into train and test",
                evs.len()
            )));
        }
        for (i, e) in evs.iter().enumerate() {
            let s = sample(e)?;
            if i < n_train {
                train.push(s);
            } else {
                test.push(s);
            }
        }
        if class == EventClass::Fa {
            fa_test = evs.len() - n_train;
        }
    }
    let k = (fa_test as f64 * opts.unknown_ratio).round() as usize;
    for class in UNKNOWN_CLASSES {
        let evs: Vec<&TruthEvent> = truth.of_class(class).collect();
        for e in &evs[evs.len().saturating_sub(k)..] {
            test.push(sample(e)?);
        }
    }
    train.sort_by_key(|s| s.event.start);
    Ok(ClassifierDataset { train, test })
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic two-sided KS critical value at significance 0.01.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}
