//! Load series model, delta encoding and CSV ingestion.
//!
//! A [`RawSeries`] is a regularly sampled univariate load profile in kW. Its
//! delta-encoded form keeps the first value verbatim and replaces every later
//! value by its difference to the predecessor:
//!
//! ```text
//! [x1, x2, ..., xN]  ->  [x1, x2 - x1, ..., xN - xN-1]
//! ```
//!
//! Index 0 of the encoded stream is therefore a level, not a difference, and
//! every consumer downstream treats it as a non-anomalous seed.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sampling step of smart-meter aggregates.
pub const DEFAULT_STEP_SECS: i64 = 300;

fn step_from_secs(secs: i64) -> Result<TimeDelta> {
    if secs <= 0 {
        return Err(Error::InvalidParameter(format!(
            "step must be strictly positive, got {secs} s"
        )));
    }
    Ok(TimeDelta::seconds(secs))
}

/// Regularly sampled load measurements (kW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeriesRepr", into = "SeriesRepr")]
pub struct RawSeries {
    start_time: DateTime<Utc>,
    step: TimeDelta,
    values: Vec<f64>,
}

/// Delta-encoded load series. Element 0 is the first raw value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeriesRepr", into = "SeriesRepr")]
pub struct DeltaSeries {
    start_time: DateTime<Utc>,
    step: TimeDelta,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SeriesRepr {
    start_time: DateTime<Utc>,
    step_secs: i64,
    values: Vec<f64>,
}

impl TryFrom<SeriesRepr> for RawSeries {
    type Error = Error;

    fn try_from(r: SeriesRepr) -> Result<Self> {
        RawSeries::new(r.start_time, step_from_secs(r.step_secs)?, r.values)
    }
}

impl From<RawSeries> for SeriesRepr {
    fn from(s: RawSeries) -> Self {
        SeriesRepr {
            start_time: s.start_time,
            step_secs: s.step.num_seconds(),
            values: s.values,
        }
    }
}

impl TryFrom<SeriesRepr> for DeltaSeries {
    type Error = Error;

    fn try_from(r: SeriesRepr) -> Result<Self> {
        DeltaSeries::new(r.start_time, step_from_secs(r.step_secs)?, r.values)
    }
}

impl From<DeltaSeries> for SeriesRepr {
    fn from(s: DeltaSeries) -> Self {
        SeriesRepr {
            start_time: s.start_time,
            step_secs: s.step.num_seconds(),
            values: s.values,
        }
    }
}

fn check_shape(step: TimeDelta, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if step <= TimeDelta::zero() {
        return Err(Error::InvalidParameter("step must be strictly positive".into()));
    }
    Ok(())
}

macro_rules! timeline_accessors {
    () => {
        pub fn start_time(&self) -> DateTime<Utc> {
            self.start_time
        }

        pub fn step(&self) -> TimeDelta {
            self.step
        }

        pub fn values(&self) -> &[f64] {
            &self.values
        }

        pub fn len(&self) -> usize {
            self.values.len()
        }

        /// Always false for a constructed series; kept for API symmetry.
        pub fn is_empty(&self) -> bool {
            self.values.is_empty()
        }

        /// Timestamp of sample `index`: `start_time + index * step`.
        pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
            self.start_time + self.step * index as i32
        }

        /// Number of samples per day at this step (rounded down).
        pub fn samples_per_day(&self) -> usize {
            (86_400 / self.step.num_seconds().max(1)) as usize
        }
    };
}

impl RawSeries {
    pub fn new(start_time: DateTime<Utc>, step: TimeDelta, values: Vec<f64>) -> Result<Self> {
        check_shape(step, &values)?;
        Ok(Self {
            start_time,
            step,
            values,
        })
    }

    timeline_accessors!();

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl DeltaSeries {
    pub fn new(start_time: DateTime<Utc>, step: TimeDelta, values: Vec<f64>) -> Result<Self> {
        check_shape(step, &values)?;
        Ok(Self {
            start_time,
            step,
            values,
        })
    }

    timeline_accessors!();

    /// The seed value stored at index 0.
    pub fn first_value(&self) -> f64 {
        self.values[0]
    }

    /// Successive differences, i.e. the encoded stream without its seed.
    pub fn deltas(&self) -> &[f64] {
        &self.values[1..]
    }
}

/// Encodes a raw series as its first value followed by successive differences.
pub fn delta_encode(series: &RawSeries) -> DeltaSeries {
    let values = encode_values(series.values());
    DeltaSeries {
        start_time: series.start_time,
        step: series.step,
        values,
    }
}

/// Inverse of [`delta_encode`].
pub fn delta_decode(delta: &DeltaSeries) -> RawSeries {
    let values = decode_values(delta.values());
    RawSeries {
        start_time: delta.start_time,
        step: delta.step,
        values,
    }
}

/// Slice-level encoder. Returns an empty vector for empty input.
pub fn encode_values(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    if let Some(&first) = values.first() {
        out.push(first);
        out.extend(values.windows(2).map(|w| w[1] - w[0]));
    }
    out
}

/// Slice-level decoder (running sum).
pub fn decode_values(encoded: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded.len());
    let mut acc = 0.0;
    for (i, &d) in encoded.iter().enumerate() {
        acc = if i == 0 { d } else { acc + d };
        out.push(acc);
    }
    out
}

/// One timestamped measurement, as read from an input row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    pub timestamp: DateTime<Utc>,
    pub load_kw: f64,
}

/// Parses an ISO-8601 timestamp. Offsets are converted to UTC, naive values are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Parses one `timestamp,load_kw` data line (no header handling).
pub fn parse_point_line(line: &str) -> Option<LoadPoint> {
    let mut parts = line.trim().split(',');
    let ts = parse_timestamp(parts.next()?)?;
    let load: f64 = parts.next()?.trim().parse().ok()?;
    if parts.next().is_some() || !load.is_finite() {
        return None;
    }
    Some(LoadPoint {
        timestamp: ts,
        load_kw: load,
    })
}

/// Column names to read from an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub timestamp: String,
    pub load: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            load: "load_kw".into(),
        }
    }
}

/// What to do with missing rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Keep the observed values contiguous and only report the gaps.
    /// Timestamps after a gap no longer follow `start + i * step`.
    #[default]
    Report,
    /// Fill every missing slot with the last observed value.
    HoldLast,
    /// Fill missing slots by linear interpolation between the neighbours.
    Linear,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub columns: CsvColumns,
    /// Expected step. Inferred from the first two rows when `None`.
    pub step: Option<TimeDelta>,
    pub gap_policy: GapPolicy,
}

/// Missing rows between two consecutive observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// Index (in the returned series) of the last value before the gap.
    pub after_index: usize,
    pub missing: usize,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub series: RawSeries,
    pub gaps: Vec<Gap>,
}

pub fn ingest_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path)?;
    ingest_reader(std::io::BufReader::new(file), opts)
}

/// Reads a regularly sampled series from CSV in one pass.
pub fn ingest_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let ts_col = col(&opts.columns.timestamp)?;
    let load_col = col(&opts.columns.load)?;

    let mut step = opts.step;
    let mut start: Option<DateTime<Utc>> = None;
    let mut last: Option<DateTime<Utc>> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut gaps = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let ts = parse_timestamp(field(ts_col)).ok_or_else(|| Error::Parse {
            row,
            message: format!("bad timestamp `{}`", field(ts_col)),
        })?;
        let load: f64 = field(load_col)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Parse {
                row,
                message: format!("bad load value `{}`", field(load_col)),
            })?;

        if let Some(prev) = last {
            let dt = ts - prev;
            if dt <= TimeDelta::zero() {
                return Err(Error::Order {
                    row,
                    message: format!("{} follows {}", format_timestamp(ts), format_timestamp(prev)),
                });
            }
            let step = *step.get_or_insert(dt);
            let (q, r) = (
                dt.num_milliseconds() / step.num_milliseconds(),
                dt.num_milliseconds() % step.num_milliseconds(),
            );
            if r != 0 {
                return Err(Error::Step {
                    row,
                    message: format!("interval of {} s is not a multiple of {} s", dt.num_seconds(), step.num_seconds()),
                });
            }
            if q > 1 {
                let missing = (q - 1) as usize;
                let prev_value = *values.last().expect("previous row pushed");
                gaps.push(Gap {
                    after_index: values.len() - 1,
                    missing,
                    from: prev,
                    to: ts,
                });
                match opts.gap_policy {
                    GapPolicy::Report => {}
                    GapPolicy::HoldLast => values.extend(std::iter::repeat_n(prev_value, missing)),
                    GapPolicy::Linear => {
                        let slope = (load - prev_value) / q as f64;
                        values.extend((1..=missing).map(|k| prev_value + slope * k as f64));
                    }
                }
            }
        } else {
            start = Some(ts);
        }
        values.push(load);
        last = Some(ts);
    }

    let start = start.ok_or(Error::EmptyInput)?;
    let step = step.unwrap_or(TimeDelta::seconds(DEFAULT_STEP_SECS));
    Ok(Ingested {
        series: RawSeries::new(start, step, values)?,
        gaps,
    })
}

/// Writes a series in the `timestamp,load_kw` ingestion format.
pub fn write_csv<W: Write>(series: &RawSeries, mut out: W) -> Result<()> {
    writeln!(out, "timestamp,load_kw")?;
    for (i, v) in series.values().iter().enumerate() {
        writeln!(out, "{},{}", format_timestamp(series.timestamp(i)), v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2017, 9, 15, 0, 0, 0).unwrap()
    }

    fn raw(values: &[f64]) -> RawSeries {
        RawSeries::new(t0(), TimeDelta::minutes(5), values.to_vec()).unwrap()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(delta_encode(&raw(&[1.0, 3.0, 2.0, 2.0])).values(), &[1.0, 2.0, -1.0, 0.0]);
        assert_eq!(delta_encode(&raw(&[4.5, 4.5, 4.5])).values(), &[4.5, 0.0, 0.0]);
        let x = raw(&[0.5, -1.2, 7.0]);
        let back = delta_decode(&delta_encode(&x));
        for (a, b) in back.values().iter().zip(x.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn decode_examples() {
        let d = DeltaSeries::new(t0(), TimeDelta::minutes(5), vec![1.0, 2.0, -1.0, 0.0]).unwrap();
        assert_eq!(delta_decode(&d).values(), &[1.0, 3.0, 2.0, 2.0]);
        let d = DeltaSeries::new(t0(), TimeDelta::minutes(5), vec![7.25]).unwrap();
        assert_eq!(delta_decode(&d).values(), &[7.25]);
        assert_eq!(d.first_value(), 7.25);
        assert!(d.deltas().is_empty());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            RawSeries::new(t0(), TimeDelta::minutes(5), vec![]),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            DeltaSeries::new(t0(), TimeDelta::minutes(5), vec![]),
            Err(Error::EmptyInput)
        ));
        assert!(RawSeries::new(t0(), TimeDelta::zero(), vec![1.0]).is_err());
    }

    #[test]
    fn timestamp_arithmetic() {
        let s = raw(&[0.0; 10]);
        assert_eq!(s.timestamp(3) - s.timestamp(1), s.step() * 2);
        assert_eq!(s.samples_per_day(), 288);
    }

    #[test]
    fn ingest_two_rows() {
        let data = "timestamp,load_kw\n2017-09-15T00:00:00Z,10.0\n2017-09-15T00:05:00Z,12.5\n";
        let got = ingest_reader(data.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(got.series.values(), &[10.0, 12.5]);
        assert_eq!(got.series.step(), TimeDelta::minutes(5));
        assert!(got.gaps.is_empty());
    }

    #[test]
    fn ingest_duplicate_timestamp_is_order_error() {
        let data = "timestamp,load_kw\n2017-09-15T00:00:00Z,10.0\n2017-09-15T00:00:00Z,12.5\n";
        let err = ingest_reader(data.as_bytes(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Order { row: 3, .. }), "{err:?}");
    }

    #[test]
    fn ingest_irregular_step_is_step_error() {
        let data = "timestamp,load_kw\n2017-09-15T00:00:00Z,1\n2017-09-15T00:05:00Z,2\n2017-09-15T00:12:00Z,3\n";
        let err = ingest_reader(data.as_bytes(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Step { row: 4, .. }), "{err:?}");
    }

    #[test]
    fn ingest_bad_row_reports_row_number() {
        let data = "timestamp,load_kw\n2017-09-15T00:00:00Z,1\n2017-09-15T00:05:00Z,abc\n";
        let err = ingest_reader(data.as_bytes(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err:?}");
    }

    #[test]
    fn ingest_reports_and_fills_gaps() {
        let data = "timestamp,load_kw\n2017-09-15T00:00:00Z,1\n2017-09-15T00:05:00Z,2\n2017-09-15T00:20:00Z,5\n";
        let got = ingest_reader(data.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(got.series.values(), &[1.0, 2.0, 5.0]);
        assert_eq!(got.gaps.len(), 1);
        assert_eq!(got.gaps[0].after_index, 1);
        assert_eq!(got.gaps[0].missing, 2);

        let opts = IngestOptions {
            gap_policy: GapPolicy::Linear,
            ..Default::default()
        };
        let got = ingest_reader(data.as_bytes(), &opts).unwrap();
        assert_eq!(got.series.values(), &[1.0, 2.0, 3.0, 4.0, 5.0]);

        let opts = IngestOptions {
            gap_policy: GapPolicy::HoldLast,
            ..Default::default()
        };
        let got = ingest_reader(data.as_bytes(), &opts).unwrap();
        assert_eq!(got.series.values(), &[1.0, 2.0, 2.0, 2.0, 5.0]);
    }

    #[test]
    fn ingest_custom_columns() {
        let data = "when,kw,other\n2017-09-15 00:00:00,1,x\n2017-09-15 00:05:00,2,y\n";
        let opts = IngestOptions {
            columns: CsvColumns {
                timestamp: "when".into(),
                load: "kw".into(),
            },
            ..Default::default()
        };
        let got = ingest_reader(data.as_bytes(), &opts).unwrap();
        assert_eq!(got.series.values(), &[1.0, 2.0]);
    }

    #[test]
    fn csv_writer_round_trips() {
        let s = raw(&[200.125, 199.5, 1e-3]);
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let got = ingest_reader(buf.as_slice(), &IngestOptions::default()).unwrap();
        assert_eq!(got.series, s);
    }

    #[test]
    fn point_line_parser() {
        let p = parse_point_line("2017-09-15T00:05:00Z, 3.5").unwrap();
        assert_eq!(p.load_kw, 3.5);
        assert!(parse_point_line("timestamp,load_kw").is_none());
        assert!(parse_point_line("2017-09-15T00:05:00Z,nan").is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_integers(v in prop::collection::vec(-1_000_000i64..1_000_000, 1..200)) {
                let x: Vec<f64> = v.iter().map(|&i| i as f64).collect();
                let s = raw(&x);
                let enc = delta_encode(&s);
                prop_assert_eq!(enc.len(), s.len());
                let back = delta_decode(&enc);
                prop_assert_eq!(back.values(), s.values());
            }

            #[test]
            fn round_trip_floats(x in prop::collection::vec(-1e4f64..1e4, 1..500)) {
                let s = raw(&x);
                let back = delta_decode(&delta_encode(&s));
                let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
                for (a, b) in back.values().iter().zip(&x) {
                    prop_assert!((a - b).abs() <= 1e-12 * scale);
                }
            }
        }
    }
}
