//! Six-statistic feature vectors of delta-encoded samples and their standardization.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::EventClass;

pub const FEATURE_DIM: usize = 6;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = ["mu", "sigma", "min", "max", "n0", "nminmax"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Number of zero deltas.
    pub n_zero: usize,
    /// Distance between the positions of the minimum and the maximum.
    pub n_minmax: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<EventClass>,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.mean,
            self.std,
            self.min,
            self.max,
            self.n_zero as f64,
            self.n_minmax as f64,
        ]
    }

    pub fn with_label(mut self, label: EventClass) -> Self {
        self.label = Some(label);
        self
    }
}

/// Computes the feature vector of a delta sample.
///
/// A delta counts as zero when `|x| <= zero_epsilon`. Ties in the arg-min and
/// arg-max go to the first occurrence.
pub fn extract_features(deltas: &[f64], zero_epsilon: f64) -> Result<FeatureVector> {
    let n = deltas.len();
    if n < 2 {
        return Err(Error::SampleTooShort(n));
    }
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let var = deltas.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (mut imin, mut imax) = (0, 0);
    for (i, &x) in deltas.iter().enumerate() {
        if x < deltas[imin] {
            imin = i;
        }
        if x > deltas[imax] {
            imax = i;
        }
    }
    Ok(FeatureVector {
        mean,
        std: var.sqrt(),
        min: deltas[imin],
        max: deltas[imax],
        n_zero: deltas.iter().filter(|x| x.abs() <= zero_epsilon).count(),
        n_minmax: imin.abs_diff(imax),
        label: None,
    })
}

/// Per-feature affine standardization fitted on training vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; FEATURE_DIM],
    /// Sample standard deviation; zero marks a feature that is only centered.
    pub std: [f64; FEATURE_DIM],
}

impl Standardizer {
    pub fn fit(train: &[[f64; FEATURE_DIM]]) -> Result<Self> {
        let n = train.len();
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "standardizer needs at least 2 training vectors, got {n}"
            )));
        }
        let mut mean = [0.0; FEATURE_DIM];
        let mut std = [0.0; FEATURE_DIM];
        for j in 0..FEATURE_DIM {
            mean[j] = train.iter().map(|v| v[j]).sum::<f64>() / n as f64;
            let var = train.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1) as f64;
            std[j] = var.sqrt();
        }
        Ok(Self { mean, std })
    }

    pub fn fit_vectors(train: &[FeatureVector]) -> Result<Self> {
        Self::fit(&train.iter().map(FeatureVector::to_array).collect::<Vec<_>>())
    }

    /// Indices of features with zero spread in the training data.
    pub fn zero_spread_features(&self) -> Vec<usize> {
        (0..FEATURE_DIM).filter(|&j| self.std[j] == 0.0).collect()
    }

    fn scale(&self, j: usize) -> f64 {
        if self.std[j] > 0.0 {
            self.std[j]
        } else {
            1.0
        }
    }

    pub fn transform(&self, v: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|j| (v[j] - self.mean[j]) / self.scale(j))
    }

    pub fn inverse(&self, z: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        std::array::from_fn(|j| z[j] * self.scale(j) + self.mean[j])
    }
}

/// CSV header of the feature interchange format.
pub const FEATURE_CSV_HEADER: &str = "mu,sigma,min,max,n0,nminmax,label";

pub fn write_feature_csv<W: Write>(rows: &[FeatureVector], mut out: W) -> Result<()> {
    writeln!(out, "{FEATURE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.mean,
            r.std,
            r.min,
            r.max,
            r.n_zero,
            r.n_minmax,
            r.label.map(|l| l.as_str()).unwrap_or("")
        )?;
    }
    Ok(())
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<FeatureVector>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, message: e.to_string() })?;
    let expected: Vec<&str> = FEATURE_CSV_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            row: 1,
            message: format!("expected header `{FEATURE_CSV_HEADER}`"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let bad = |what: &str| Error::Parse { row, message: format!("bad {what}") };
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(expected[j]))
        };
        let count = |j: usize| -> Result<usize> {
            rec.get(j).and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| bad(expected[j]))
        };
        let label = match rec.get(6).unwrap_or("") {
            "" => None,
            s => Some(s.parse::<EventClass>().map_err(|_| bad("label"))?),
        };
        out.push(FeatureVector {
            mean: num(0)?,
            std: num(1)?,
            min: num(2)?,
            max: num(3)?,
            n_zero: count(4)?,
            n_minmax: count(5)?,
            label,
        });
    }
    Ok(out)
}
