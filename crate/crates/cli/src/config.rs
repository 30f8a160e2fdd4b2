//! Experiment configuration: one JSON file, flags layered on top.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use tempoprobe::analysis::AnalysisConfig;
use tempoprobe::trainer::{RepeatTask, TrainConfig};
use tempoprobe::transformer::ModelConfig;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// List length of the repeated lag-CRP prompts.
    #[serde(rename = "N")]
    pub n: usize,
    /// Independent permutations averaged per curve.
    pub perms: usize,
    /// Cue index of the free-recall prompts; `N / 2` when absent.
    #[serde(default)]
    pub middle: Option<usize>,
    #[serde(rename = "recall_N", default = "default_recall_n")]
    pub recall_n: usize,
    #[serde(default = "default_recall_prompts")]
    pub recall_prompts: usize,
}

fn default_recall_n() -> usize {
    100
}

fn default_recall_prompts() -> usize {
    25
}

impl ProbeConfig {
    pub fn toy() -> Self {
        Self {
            n: 64,
            perms: 10,
            middle: None,
            recall_n: default_recall_n(),
            recall_prompts: default_recall_prompts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default = "RepeatTask::toy")]
    pub task: RepeatTask,
    #[serde(default = "ProbeConfig::toy")]
    pub probe: ProbeConfig,
    #[serde(default = "AnalysisConfig::toy")]
    pub analysis: AnalysisConfig,
    /// Root seed; `train.seed` is replaced by it when the config resolves.
    pub seed: u64,
}

impl ExperimentConfig {
    /// The two-layer attention-only repeat-task experiment.
    pub fn toy() -> Self {
        Self {
            model: ModelConfig::toy_induction(),
            train: TrainConfig::toy(),
            task: RepeatTask::toy(),
            probe: ProbeConfig::toy(),
            analysis: AnalysisConfig::toy(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    /// A missing or malformed file is a usage error.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    pub fn load_or_toy(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::toy()), Self::load)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempoprobe::transformer::ScoreSource;

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::toy();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn minimal_file_takes_toy_defaults() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::toy().to_json()).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("probe");
        obj.remove("task");
        obj.remove("analysis");
        obj.insert("seed".into(), 7.into());
        let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(cfg.probe, ProbeConfig::toy());
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.analysis.source, ScoreSource::Pre);
    }

    #[test]
    fn probe_keys_and_source_spelling() {
        let probe: ProbeConfig = serde_json::from_str(r#"{"N": 32, "perms": 3, "middle": 5}"#).unwrap();
        assert_eq!((probe.n, probe.perms, probe.middle, probe.recall_n), (32, 3, Some(5), 100));
        let a: AnalysisConfig = serde_json::from_str(r#"{"lags": 10, "exclusion": 4, "source": "post"}"#).unwrap();
        assert_eq!(a.source, ScoreSource::Post);
        assert_eq!(a.window, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::toy().to_json()).unwrap();
        v.as_object_mut().unwrap().insert("sed".into(), 1.into());
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }
}
