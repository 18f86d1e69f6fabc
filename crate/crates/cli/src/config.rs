//! Optional JSON run configuration (`--config`). Every section defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use qdtile::hash::content_hash;
use qdtile::lm::{ModelConfig, SamplingParams, TrainConfig};
use qdtile::qd::{BaselineConfig, SynthesisConfig};
use qdtile::FeatureConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    Desk,
    #[default]
    Small,
    Micro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub height: usize,
    pub width: usize,
    pub features: FeatureConfig,
    pub synthesis: SynthesisConfig,
    pub baseline: BaselineConfig,
    pub model: ModelPreset,
    /// Overrides the preset when present.
    pub model_config: Option<ModelConfig>,
    pub train: TrainConfig,
    pub sampling: SamplingParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            height: 8,
            width: 12,
            features: FeatureConfig::default(),
            synthesis: SynthesisConfig::default(),
            baseline: BaselineConfig::default(),
            model: ModelPreset::default(),
            model_config: None,
            train: TrainConfig {
                steps: 4000,
                ..TrainConfig::default()
            },
            sampling: SamplingParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow::anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner()))
    }

    pub fn hash(&self) -> String {
        content_hash(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn model_config(&self) -> ModelConfig {
        let context = self.height * self.width + 2;
        self.model_config.clone().unwrap_or_else(|| match self.model {
            ModelPreset::Desk => ModelConfig {
                context,
                ..ModelConfig::desk()
            },
            ModelPreset::Small => ModelConfig::small(context),
            ModelPreset::Micro => ModelConfig {
                context,
                ..ModelConfig::micro()
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults_and_typos_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"steps": 7}, "model": "micro"}"#).unwrap();
        let c = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.height, 8);
        assert_eq!(c.model_config().context, 98);
        std::fs::write(&p, r#"{"trian": {}}"#).unwrap();
        assert!(RunConfig::load(Some(&p)).is_err());
    }
}
