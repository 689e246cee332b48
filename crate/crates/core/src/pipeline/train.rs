//! EVM training with threshold selection by time-series cross-validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evm::{EvmModel, Mode};
use crate::features::{FeatureVector, Standardizer};
use crate::labels::EventClass;
use crate::metrics::macro_f1;

use super::config::EvmConfig;

/// Train/validation index ranges of expanding-window time-series folds: the
/// data is cut into `folds + 1` blocks and fold `i` validates on block `i + 1`
/// after training on all earlier blocks.
pub fn time_series_folds(n: usize, folds: usize) -> Result<Vec<(std::ops::Range<usize>, std::ops::Range<usize>)>> {
    if folds < 2 || n < folds + 1 {
        return Err(Error::Fold(format!("{n} rows cannot form {folds} time-series folds")));
    }
    let test = n / (folds + 1);
    let first = n - folds * test;
    Ok((0..folds)
        .map(|i| {
            let end = first + i * test;
            (0..end, end..end + test)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoScore {
    pub rho: f64,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rho: f64,
    /// True when no grid value reached the F1 target.
    pub fallback: bool,
    pub cv: Vec<RhoScore>,
    pub n_train: usize,
    pub classes: Vec<EventClass>,
}

/// Selects the rejection threshold by cross-validation and refits on all rows.
///
/// Rows must be in time order and labeled.
pub fn train_evm(rows: &[FeatureVector], cfg: &EvmConfig, zero_spread_warn: bool) -> Result<(EvmModel, TrainReport)> {
    let labels: Vec<EventClass> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.label.ok_or_else(|| Error::Label(format!("training row {i} has no label"))))
        .collect::<Result<_>>()?;
    let mut classes = labels.clone();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::NeedTwoClasses);
    }

    let (rho, fallback, cv) = if cfg.select_rho {
        select_rho(rows, &labels, &classes, cfg)?
    } else {
        (cfg.rho, false, Vec::new())
    };
    let params = crate::evm::EvmParams { rho, ..cfg.params() };
    let model = EvmModel::fit_features(rows, params)?;
    if zero_spread_warn {
        if let Some(s) = &model.standardizer {
            for j in s.zero_spread_features() {
                tracing::warn!(feature = crate::features::FEATURE_NAMES[j], "feature has zero spread; centered only");
            }
        }
    }
    Ok((
        model,
        TrainReport {
            rho,
            fallback,
            cv,
            n_train: rows.len(),
            classes,
        },
    ))
}

fn select_rho(
    rows: &[FeatureVector],
    labels: &[EventClass],
    classes: &[EventClass],
    cfg: &EvmConfig,
) -> Result<(f64, bool, Vec<RhoScore>)> {
    let folds = time_series_folds(rows.len(), cfg.cv_folds)?;
    let mut grid = cfg.rho_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut sums = vec![0.0; grid.len()];
    for (k, (train, val)) in folds.iter().enumerate() {
        let fold_rows = &rows[train.clone()];
        let fold_classes: std::collections::BTreeSet<_> = labels[train.clone()].iter().collect();
        if fold_classes.len() < 2 {
            return Err(Error::Fold(format!("training part of fold {k} holds a single class")));
        }
        let standardizer = Standardizer::fit_vectors(fold_rows).map_err(|e| Error::Fold(e.to_string()))?;
        let points = crate::evm::labeled_points(fold_rows, &standardizer)?;
        let model = EvmModel::fit(&points, cfg.params())?;
        let preds: Vec<_> = rows[val.clone()]
            .iter()
            .map(|r| model.predict(&standardizer.transform(&r.to_array()), Mode::Closed))
            .collect::<Result<_>>()?;
        for (g, &rho) in grid.iter().enumerate() {
            let pairs: Vec<(EventClass, Option<EventClass>)> = preds
                .iter()
                .zip(&labels[val.clone()])
                .map(|(p, &t)| (t, p.label.filter(|_| p.probability >= rho)))
                .collect();
            sums[g] += macro_f1(classes, &pairs);
        }
    }
    let cv: Vec<RhoScore> = grid
        .iter()
        .zip(&sums)
        .map(|(&rho, &s)| RhoScore {
            rho,
            mean_f1: s / folds.len() as f64,
        })
        .collect();
    if let Some(best) = cv.iter().find(|r| r.mean_f1 >= cfg.f1_target) {
        return Ok((best.rho, false, cv));
    }
    let best = cv
        .iter()
        .fold(&cv[0], |acc, r| if r.mean_f1 > acc.mean_f1 { r } else { acc });
    tracing::warn!(
        rho = best.rho,
        f1 = best.mean_f1,
        target = cfg.f1_target,
        "no threshold reaches the F1 target; using the best one"
    );
    Ok((best.rho, true, cv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x: f64, label: EventClass) -> FeatureVector {
        FeatureVector {
            mean: x,
            std: 1.0 + x.abs() * 0.1,
            min: x - 1.0,
            max: x + 1.0,
            n_zero: 0,
            n_minmax: 3,
            label: Some(label),
        }
    }

    #[test]
    fn folds_are_time_ordered() {
        let f = time_series_folds(23, 5).unwrap();
        assert_eq!(f.len(), 5);
        for (train, val) in &f {
            assert_eq!(train.start, 0);
            assert_eq!(train.end, val.start);
            assert_eq!(val.len(), 3);
        }
        assert_eq!(f[4].1.end, 23);
        assert!(matches!(time_series_folds(5, 5), Err(Error::Fold(_))));
    }

    #[test]
    fn separable_data_selects_grid_minimum() {
        let rows: Vec<FeatureVector> = (0..60)
            .map(|i| if i % 2 == 0 { row(1.0 + (i % 7) as f64 * 0.01, EventClass::Fa) } else { row(50.0 + (i % 5) as f64 * 0.01, EventClass::No) })
            .collect();
        let (model, report) = train_evm(&rows, &EvmConfig::default(), false).unwrap();
        assert!(!report.fallback);
        assert!((report.rho - 0.10).abs() < 1e-12);
        assert_eq!(model.params.rho, report.rho);
        assert_eq!(report.cv.len(), 22);
    }

    #[test]
    fn unreachable_target_falls_back() {
        // labels alternate on identical features: no threshold can separate them
        let rows: Vec<FeatureVector> = (0..60)
            .map(|i| row((i / 2) as f64, if i % 2 == 0 { EventClass::Fa } else { EventClass::No }))
            .collect();
        let (_, report) = train_evm(&rows, &EvmConfig::default(), false).unwrap();
        assert!(report.fallback);
        let best = report.cv.iter().map(|r| r.mean_f1).fold(f64::MIN, f64::max);
        assert_eq!(report.cv.iter().find(|r| r.rho == report.rho).unwrap().mean_f1, best);
    }

    #[test]
    fn errors() {
        let one: Vec<FeatureVector> = (0..20).map(|i| row(i as f64, EventClass::Fa)).collect();
        assert!(matches!(train_evm(&one, &EvmConfig::default(), false), Err(Error::NeedTwoClasses)));
        let few = vec![row(0.0, EventClass::Fa), row(1.0, EventClass::No), row(2.0, EventClass::Fa)];
        assert!(matches!(train_evm(&few, &EvmConfig::default(), false), Err(Error::Fold(_))));
    }
}
