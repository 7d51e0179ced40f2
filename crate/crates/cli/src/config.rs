use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use rallynet::agents::HbcConfig;
use rallynet::engine::{RolloutMode, MAX_LEN};
use rallynet::experience::DEFAULT_CAP;
use rallynet::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSettings {
    pub max_len: usize,
    pub mode: RolloutMode,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings { max_len: MAX_LEN, mode: RolloutMode::InitOnly }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Base seed from which the five evaluation seeds are derived.
    pub base_seed: u64,
    /// Experiences kept per grid key.
    pub index_cap: usize,
    /// Simulated rallies per recorded initial state in win-rate runs.
    pub n_per_init: usize,
    /// Samples per matching state in agent case studies.
    pub case_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { base_seed: 0, index_cap: DEFAULT_CAP, n_per_init: 10, case_samples: 4 }
    }
}

/// Everything a pipeline run needs besides file paths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub hbc: HbcConfig,
    pub engine: EngineSettings,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.model.validate()?;
        cfg.hbc.validate()?;
        anyhow::ensure!(cfg.engine.max_len > 0, "engine.max_len must be positive");
        anyhow::ensure!(cfg.eval.index_cap > 0, "eval.index_cap must be positive");
        Ok(cfg)
    }

    /// Applies the global command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, mode: Option<RolloutMode>) -> RunConfig {
        if let Some(s) = seed {
            self.model.seed = s;
            self.eval.base_seed = s;
        }
        if let Some(m) = mode {
            self.engine.mode = m;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: RunConfig = toml::from_str("[model]\nepochs = 3\n[engine]\nmode = \"two_step\"\n").unwrap();
        assert_eq!(cfg.model.epochs, 3);
        assert_eq!(cfg.model.context_dim, ModelConfig::default().context_dim);
        assert_eq!(cfg.engine.mode, RolloutMode::TwoStep);
        assert_eq!(cfg.eval, EvalSettings::default());
    }

    #[test]
    fn overrides_reach_model_and_eval() {
        let cfg = RunConfig::default().with_overrides(Some(9), Some(RolloutMode::TwoStep));
        assert_eq!((cfg.model.seed, cfg.eval.base_seed, cfg.engine.mode), (9, 9, RolloutMode::TwoStep));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
