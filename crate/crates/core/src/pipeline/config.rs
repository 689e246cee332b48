use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetOptions, ScenarioConfig};
use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::evm::{Distance, EvmParams, Mode};
use crate::metrics::FadParams;
use crate::sampler::SamplerConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Deltas with `|x| <= zero_epsilon` count as zero.
    pub zero_epsilon: f64,
    /// Samples added on both sides of a labeled event when building training data.
    pub sample_margin: usize,
    pub train_fraction: f64,
    /// Unknown-class test samples per class, relative to the FA test count.
    pub unknown_ratio: f64,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        let d = DatasetOptions::default();
        Self {
            zero_epsilon: d.zero_epsilon,
            sample_margin: d.margin,
            train_fraction: d.train_fraction,
            unknown_ratio: d.unknown_ratio,
        }
    }
}

impl FeaturesConfig {
    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions {
            margin: self.sample_margin,
            train_fraction: self.train_fraction,
            unknown_ratio: self.unknown_ratio,
            zero_epsilon: self.zero_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvmConfig {
    pub tailsize: usize,
    pub distance_multiplier: f64,
    pub distance: Distance,
    /// Used as is when `select_rho` is off.
    pub rho: f64,
    pub mode: Mode,
    pub select_rho: bool,
    pub f1_target: f64,
    pub cv_folds: usize,
    pub rho_grid: Vec<f64>,
}

pub fn default_rho_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (2..=19).map(|i| (i * 5) as f64 / 100.0).collect();
    g.extend([0.99, 0.999, 0.9999, 0.99999]);
    g
}

impl Default for EvmConfig {
    fn default() -> Self {
        let p = EvmParams::default();
        Self {
            tailsize: p.tailsize,
            distance_multiplier: p.distance_multiplier,
            distance: p.distance,
            rho: p.rho,
            mode: Mode::Open,
            select_rho: true,
            f1_target: 0.8,
            cv_folds: 5,
            rho_grid: default_rho_grid(),
        }
    }
}

impl EvmConfig {
    pub fn params(&self) -> EvmParams {
        EvmParams {
            tailsize: self.tailsize,
            distance_multiplier: self.distance_multiplier,
            distance: self.distance,
            rho: self.rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub tau_step: f64,
    pub fad: FadParams,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            tau_step: 0.01,
            fad: FadParams::default(),
        }
    }
}

impl EvaluationConfig {
    /// Threshold grid `0, step, 2 step, ..., 1`.
    pub fn tau_grid(&self) -> Vec<f64> {
        let n = (1.0 / self.tau_step).round() as usize;
        (0..=n).map(|i| (i as f64 * self.tau_step).min(1.0)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub input: Option<String>,
    pub truth: Option<String>,
    pub model: Option<String>,
    pub calibration: Option<String>,
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub detector: DetectorConfig,
    pub sampler: SamplerConfig,
    pub features: FeaturesConfig,
    pub evm: EvmConfig,
    pub evaluation: EvaluationConfig,
    pub io: IoConfig,
    pub scenario: ScenarioConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            detector: DetectorConfig::default(),
            sampler: SamplerConfig::default(),
            features: FeaturesConfig::default(),
            evm: EvmConfig::default(),
            evaluation: EvaluationConfig::default(),
            io: IoConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.detector.validate().map_err(cfg)?;
        self.sampler.validate().map_err(cfg)?;
        self.evm.params().validate().map_err(cfg)?;
        self.evaluation.fad.validate().map_err(cfg)?;
        self.scenario.validate().map_err(cfg)?;
        let e = &self.evm;
        if e.cv_folds < 2 {
            return Err(Error::Config("evm.cv_folds must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&e.f1_target) {
            return Err(Error::Config("evm.f1_target must lie in [0, 1]".into()));
        }
        if e.rho_grid.is_empty() || e.rho_grid.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::Config("evm.rho_grid values must lie in (0, 1)".into()));
        }
        if !(self.evaluation.tau_step > 0.0 && self.evaluation.tau_step <= 1.0) {
            return Err(Error::Config("evaluation.tau_step must lie in (0, 1]".into()));
        }
        let f = &self.features;
        if !(f.zero_epsilon >= 0.0) || !(f.train_fraction > 0.0 && f.train_fraction < 1.0) || !(f.unknown_ratio >= 0.0) {
            return Err(Error::Config(
                "features.zero_epsilon, train_fraction or unknown_ratio out of range".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = PipelineConfig::default();
        let text = c.to_toml();
        for section in ["[detector]", "[sampler]", "[features]", "[evm]", "[evaluation]", "[io]", "[scenario]"] {
            assert!(text.contains(section), "{section} missing");
        }
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_documents_use_defaults() {
        let c = PipelineConfig::from_toml("[detector]\ntau = 0.8\n[evaluation.fad]\nfp_penalty = \"literal\"\n").unwrap();
        assert_eq!(c.detector.tau, 0.8);
        assert_eq!(c.evaluation.fad.fp_penalty, crate::metrics::FpPenalty::Literal);
        assert_eq!(c.sampler, SamplerConfig::default());
    }

    #[test]
    fn rejects_bad_documents() {
        for doc in [
            "version = 2",
            "[detector]\ntau = 1.5",
            "[detector]\nbogus = 1",
            "[evm]\nrho_grid = [0.5, 1.0]",
            "[sampler]\nwindow = 2\nextension = 3",
            "not toml",
        ] {
            assert!(matches!(PipelineConfig::from_toml(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn grids() {
        let g = default_rho_grid();
        assert_eq!(g.len(), 22);
        assert!((g[0] - 0.10).abs() < 1e-12 && (g[17] - 0.95).abs() < 1e-12);
        assert_eq!(g[21], 0.99999);
        let t = EvaluationConfig::default().tau_grid();
        assert_eq!(t.len(), 101);
        assert_eq!((t[0], t[100]), (0.0, 1.0));
    }
}
