//! One JSON document holding every stage's parameters.
//!
//! Unknown keys are rejected and all invariants are checked before any
//! work starts, so a typo fails fast instead of silently running with a
//! default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ephemerality::AggregationWindow;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::io;
use crate::seed::SeedConfig;
use crate::selftrain::{BaselineDetector, SelfTrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// PP-score counting radius, meters.
    pub r: f64,
    pub window: AggregationWindow,
    /// Whether the query scan's own traversal contributes a count
    /// distribution.
    pub include_own_traversal: bool,
    pub seed_gen: SeedConfig,
    pub detector: BaselineDetector,
    pub selftrain: SelfTrainConfig,
    pub eval: EvalConfig,
    /// Worker threads for all parallel stages; `null` means all cores.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            r: 0.3,
            window: AggregationWindow::default(),
            include_own_traversal: true,
            seed_gen: SeedConfig::default(),
            detector: BaselineDetector::default(),
            selftrain: SelfTrainConfig::default(),
            eval: EvalConfig::default(),
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = io::read_to_string(path)?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) {
            return Err(Error::Config(format!("r must be positive, got {}", self.r)));
        }
        self.window.validate()?;
        self.seed_gen.validate()?;
        self.selftrain.filter.validate()?;
        self.selftrain.eval.validate()?;
        self.eval.validate()?;
        if !(0.0..=1.0).contains(&self.detector.score_threshold) {
            return Err(Error::Config(format!(
                "detector score threshold must lie in [0, 1], got {}",
                self.detector.score_threshold
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.r, 0.3);
        assert_eq!(back.seed_gen.k, 70);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"radius": 0.3}"#).unwrap_err();
        assert!(err.to_string().contains("radius"), "{err}");
        let err =
            serde_json::from_str::<PipelineConfig>(r#"{"seed_gen": {"kay": 70}}"#).unwrap_err();
        assert!(err.to_string().contains("kay"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"r": -1.0}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"seed_gen": {"filter": {"gamma": 2.0}}}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
