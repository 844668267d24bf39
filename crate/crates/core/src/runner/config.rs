use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::DetectorHandle;
use crate::error::{Error, Result};
use crate::metrics::InferenceConfig;
use crate::replay::{validate_fraction, StrategyConfig};

/// How per-task scores are computed after each increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Task `i` is scored on its own test split, for its own class.
    #[default]
    PerTask,
    /// Task `i`'s class is scored over the pooled test splits of every task
    /// seen so far, so false positives on other tasks' images count.
    Cumulative,
}

/// Which checkpoint supplies the baseline recall of forgetting-aware replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarBaseline {
    /// Each image keeps the recall measured right after its own task was
    /// learned; the drop is the forgetting accumulated since then.
    #[default]
    FirstSeen,
    /// A single cache over the whole prior pool, replaced after every task.
    Latest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub strategy: StrategyConfig,
    /// Replay fractions of the prior pool, counted in images.
    pub budgets: Vec<f64>,
    pub seeds: Vec<u64>,
    pub inference: InferenceConfig,
    pub detector: DetectorHandle,
    pub output_dir: PathBuf,
    pub eval_mode: EvalMode,
    pub far_baseline: FarBaseline,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            strategy: StrategyConfig::default(),
            budgets: vec![0.05, 0.10, 0.25, 0.50],
            seeds: vec![1, 2, 3],
            inference: InferenceConfig::default(),
            detector: DetectorHandle::default(),
            output_dir: PathBuf::from("results"),
            eval_mode: EvalMode::default(),
            far_baseline: FarBaseline::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.strategy.strategy.uses_budget() && self.budgets.is_empty() {
            return Err(Error::InvalidConfig("replay strategies need at least one budget".into()));
        }
        for &b in &self.budgets {
            validate_fraction(b)?;
        }
        self.strategy.validate()?;
        self.inference.validate()?;
        self.detector.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::json("parsing run config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Strategy;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.budgets, vec![0.05, 0.10, 0.25, 0.50]);
        assert_eq!(c.seeds.len(), 3);
        assert_eq!(c.strategy.pool_cap, 800);
        assert_eq!(c.strategy.k_select, 200);
        assert_eq!(c.inference.conf_threshold, 0.25);
        assert_eq!(c.inference.nms_iou, 0.7);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn parses_partial_json() {
        let c = RunConfig::from_json(
            r#"{"dataset_root":"d","strategy":{"strategy":"mir"},"seeds":[4],"eval_mode":"cumulative"}"#,
        )
        .unwrap();
        assert_eq!(c.strategy.strategy, Strategy::Mir);
        assert_eq!(c.strategy.k_select, 200);
        assert_eq!(c.seeds, vec![4]);
        assert_eq!(c.eval_mode, EvalMode::Cumulative);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_json(r#"{"seeds":[]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"budgets":[0.0]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"budgets":[1.2]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"unknown_field":1}"#).is_err());
    }
}
