//! Two-parameter Weibull maximum-likelihood fitting.
//!
//! For fixed shape `k` the likelihood is maximized in closed form by
//! `scale = (mean(x^k))^(1/k)`. Substituting gives the profile equation
//!
//! ```text
//! g(k) = 1/k + mean(ln x) - sum(x^k ln x) / sum(x^k) = 0
//! ```
//!
//! which is strictly decreasing in `k` and is solved by Newton iteration kept
//! inside a sign bracket (bisection whenever a step would leave it).

use serde::{Deserialize, Serialize};

/// Shape assigned to degenerate samples (single value or all equal).
pub const DEGENERATE_SHAPE: f64 = 20.0;
/// Tolerance on `|g(k)|`.
pub const SHAPE_TOLERANCE: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullFit {
    pub shape: f64,
    pub scale: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

impl WeibullFit {
    /// Survival function `exp(-(x / scale)^shape)`.
    pub fn survival(&self, x: f64) -> f64 {
        survival(x, self.shape, self.scale)
    }
}

pub fn survival(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    (-(x / scale).powf(shape)).exp()
}

/// Log-likelihood of `samples` under Weibull(shape, scale).
pub fn log_likelihood(samples: &[f64], shape: f64, scale: f64) -> f64 {
    let n = samples.len() as f64;
    let ln_scale = scale.ln();
    let mut acc = n * (shape.ln() - shape * ln_scale);
    for &x in samples {
        let lx = x.ln();
        acc += (shape - 1.0) * lx - ((lx - ln_scale) * shape).exp();
    }
    acc
}

/// Reason a fit could not be produced.
#[derive(Debug, Clone, PartialEq)]
pub enum WeibullError {
    Empty,
    NonPositive(f64),
    NoConvergence { shape: f64, residual: f64 },
}

impl std::fmt::Display for WeibullError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeibullError::Empty => write!(f, "no samples"),
            WeibullError::NonPositive(x) => write!(f, "sample {x} is not strictly positive and finite"),
            WeibullError::NoConvergence { shape, residual } => {
                write!(f, "no convergence (shape {shape}, residual {residual:e})")
            }
        }
    }
}

impl std::error::Error for WeibullError {}

/// Profile residual and its derivative for samples normalized to `max = 1`.
struct Profile {
    ln_y: Vec<f64>,
    mean_ln: f64,
}

impl Profile {
    fn eval(&self, k: f64) -> (f64, f64, f64) {
        // ln y <= 0, so y^k <= 1 and the sums cannot overflow
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &self.ln_y {
            let w = (k * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let g = 1.0 / k + self.mean_ln - s1 / s0;
        let dg = -1.0 / (k * k) - (s2 * s0 - s1 * s1) / (s0 * s0);
        (g, dg, s0)
    }
}

pub fn fit(samples: &[f64]) -> Result<WeibullFit, WeibullError> {
    if samples.is_empty() {
        return Err(WeibullError::Empty);
    }
    if let Some(&bad) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(WeibullError::NonPositive(bad));
    }
    let max = samples.iter().cloned().fold(f64::MIN, f64::max);
    let min = samples.iter().cloned().fold(f64::MAX, f64::min);
    if samples.len() == 1 || max - min <= 1e-12 * max {
        return Ok(WeibullFit {
            shape: DEGENERATE_SHAPE,
            scale: max,
            iterations: 0,
            degenerate: true,
        });
    }

    let ln_y: Vec<f64> = samples.iter().map(|x| (x / max).ln()).collect();
    let mean_ln = ln_y.iter().sum::<f64>() / ln_y.len() as f64;
    let profile = Profile { ln_y, mean_ln };
    let n = samples.len() as f64;

    // g is positive near 0 and tends to mean_ln < 0 as k grows
    let (mut lo, mut hi) = (1.0, 1.0);
    while profile.eval(lo).0 <= 0.0 && lo > 1e-8 {
        lo *= 0.5;
    }
    while profile.eval(hi).0 >= 0.0 && hi < 1e8 {
        hi *= 2.0;
    }

    let mut k = 1.0f64.clamp(lo, hi);
    for it in 1..=MAX_ITERATIONS {
        let (g, dg, s0) = profile.eval(k);
        // a bracket collapsed to rounding level is as converged as it gets
        if g.abs() < SHAPE_TOLERANCE || hi - lo <= 4.0 * f64::EPSILON * k {
            let scale = max * (s0 / n).powf(1.0 / k);
            return Ok(WeibullFit {
                shape: k,
                scale,
                iterations: it,
                degenerate: false,
            });
        }
        if g > 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let newton = k - g / dg;
        k = if dg < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let (residual, _, _) = profile.eval(k);
    Err(WeibullError::NoConvergence { shape: k, residual })
}
