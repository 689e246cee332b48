//! Spectral-residual saliency scoring of the most recent point of a window.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tunables of the spectral-residual detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrParams {
    /// Length of the scored window (real samples).
    pub window: usize,
    /// Number of preceding saliency values averaged for the comparison.
    pub local_avg: usize,
    /// Number of extrapolated points appended after the window.
    pub estimated_points: usize,
    /// Size of the moving-average filter applied to the log-amplitude spectrum.
    pub filter: usize,
}

impl Default for SrParams {
    fn default() -> Self {
        Self {
            window: 1440,
            local_avg: 21,
            estimated_points: 5,
            filter: 3,
        }
    }
}

impl SrParams {
    pub fn validate(&self) -> Result<()> {
        if self.estimated_points == 0 || self.filter == 0 || self.local_avg == 0 {
            return Err(Error::InvalidParameter(
                "sr_estimated_points, sr_filter and sr_local_avg must be positive".into(),
            ));
        }
        if self.window <= self.local_avg.max(self.estimated_points) {
            return Err(Error::InvalidParameter(format!(
                "sr_window {} must exceed sr_local_avg and sr_estimated_points",
                self.window
            )));
        }
        Ok(())
    }
}

/// Components whose amplitude falls below this fraction of the spectrum peak
/// carry no usable phase and are dropped from the reconstruction.
const RELATIVE_FLOOR: f64 = 1e-10;
const ABSOLUTE_FLOOR: f64 = 1e-8;

/// Spectral-residual scorer with cached FFT plans.
#[derive(Clone)]
pub struct SpectralResidual {
    params: SrParams,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralResidual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralResidual").field("params", &self.params).finish()
    }
}

impl SpectralResidual {
    pub fn new(params: SrParams) -> Result<Self> {
        params.validate()?;
        let len = params.window + params.estimated_points;
        let mut planner = FftPlanner::new();
        Ok(Self {
            params,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn params(&self) -> &SrParams {
        &self.params
    }

    /// Raw (unnormalized) score of the last value of `window`.
    ///
    /// Only the trailing `params.window` values are used.
    pub fn raw_score(&self, window: &[f64]) -> Result<f64> {
        let p = &self.params;
        if window.len() < p.window {
            return Err(Error::InsufficientHistory {
                needed: p.window,
                available: window.len(),
            });
        }
        let x = &window[window.len() - p.window..];
        let saliency = self.saliency_map(x);
        let n = x.len();
        let current = saliency[n - 1];
        let preceding = &saliency[n - 1 - p.local_avg..n - 1];
        let mean = preceding.iter().sum::<f64>() / preceding.len() as f64;
        if mean <= f64::EPSILON * current.abs().max(1.0) {
            return Ok(0.0);
        }
        Ok(((current - mean) / mean).max(0.0))
    }

    /// Saliency values for the real samples of `x` (extension stripped).
    pub fn saliency_map(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let n = x.len();
        let last = x[n - 1];
        // mean gradient between the last point and each of the m preceding ones
        let m = p.estimated_points;
        let slope = (1..=m).map(|i| (last - x[n - 1 - i]) / i as f64).sum::<f64>() / m as f64;
        let estimate = last + slope;

        let mut buf: Vec<Complex64> = x
            .iter()
            .copied()
            .chain(std::iter::repeat_n(estimate, m))
            .map(|v| Complex64::new(v, 0.0))
            .collect();
        let len = buf.len();
        self.forward.process(&mut buf);

        let amp: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
        let peak = amp.iter().cloned().fold(0.0, f64::max);
        let floor = ABSOLUTE_FLOOR.max(RELATIVE_FLOOR * peak);
        let log_amp: Vec<f64> = amp.iter().map(|&a| a.max(floor).ln()).collect();
        let smoothed = trailing_average(&log_amp, p.filter);

        for (k, c) in buf.iter_mut().enumerate() {
            if amp[k] <= floor {
                *c = Complex64::new(0.0, 0.0);
            } else {
                let residual = (log_amp[k] - smoothed[k]).exp();
                *c = *c / amp[k] * residual;
            }
        }
        self.inverse.process(&mut buf);
        buf.iter().take(n).map(|c| c.norm() / len as f64).collect()
    }
}

/// Moving average over the current and `size - 1` preceding values; the head
/// uses however many values exist.
pub(crate) fn trailing_average(values: &[f64], size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= size {
            acc -= values[i - size];
        }
        out.push(acc / (i + 1).min(size) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> SpectralResidual {
        SpectralResidual::new(SrParams {
            window: 256,
            ..SrParams::default()
        })
        .unwrap()
    }

    #[test]
    fn trailing_average_head_and_body() {
        let v = [3.0, 6.0, 9.0, 12.0];
        assert_eq!(trailing_average(&v, 3), vec![3.0, 4.5, 6.0, 9.0]);
    }

    #[test]
    fn constant_window_scores_zero() {
        let sr = SpectralResidual::new(SrParams::default()).unwrap();
        for c in [0.0, 1.0, -3.5, 1e5] {
            let w = vec![c; 1440];
            let s = sr.raw_score(&w).unwrap();
            assert!(s.abs() < 1e-9, "c={c} score={s}");
        }
    }

    #[test]
    fn short_window_rejected() {
        let sr = small();
        assert!(matches!(
            sr.raw_score(&[1.0; 100]),
            Err(Error::InsufficientHistory { needed: 256, available: 100 })
        ));
    }

    #[test]
    fn final_spike_raises_score() {
        let sr = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut w: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
            let base = sr.raw_score(&w).unwrap();
            *w.last_mut().unwrap() += 25.0;
            let spiked = sr.raw_score(&w).unwrap();
            assert!(spiked > base, "{spiked} <= {base}");
        }
    }

    #[test]
    fn deterministic() {
        let sr = small();
        let w: Vec<f64> = (0..300).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        assert_eq!(sr.raw_score(&w).unwrap(), sr.raw_score(&w).unwrap());
        // only the trailing window matters
        assert_eq!(sr.raw_score(&w).unwrap(), sr.raw_score(&w[44..]).unwrap());
    }

    #[test]
    fn params_validated() {
        assert!(SpectralResidual::new(SrParams {
            window: 10,
            ..SrParams::default()
        })
        .is_err());
        assert!(SpectralResidual::new(SrParams {
            filter: 0,
            ..SrParams::default()
        })
        .is_err());
    }
}
