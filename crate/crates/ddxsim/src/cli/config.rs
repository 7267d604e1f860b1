//! Pipeline configuration: one TOML file, flag overrides win.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SplitSpec;
use crate::llm::LlmConfig;
use crate::scorer::ScoreWeights;
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Knowledge base file.
    pub kb_path: PathBuf,
    /// Every output lands under this directory.
    pub out_dir: PathBuf,
    /// Scoring weight tables.
    pub weights: ScoreWeights,
    pub sim: SimConfig,
    pub split: SplitSpec,
    pub llm: StageConfigs,
    /// Directory of prompt template overrides (`<name>.txt`).
    pub templates_dir: Option<PathBuf>,
    /// Worker threads for per-disease simulation.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kb_path: PathBuf::from("kb.toml"),
            out_dir: PathBuf::from("out"),
            weights: ScoreWeights::default(),
            sim: SimConfig::default(),
            split: SplitSpec::default(),
            llm: StageConfigs::default(),
            templates_dir: None,
            workers: 1,
        }
    }
}

/// Independently overridable per-stage gateway configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfigs {
    pub chat_gen: StageLlm,
    pub checker: StageLlm,
    pub ddx: StageLlm,
    pub judge: StageLlm,
}

impl Default for StageConfigs {
    fn default() -> Self {
        StageConfigs {
            chat_gen: StageLlm::mock("mock-chat-gen"),
            checker: StageLlm::mock("mock-checker"),
            ddx: StageLlm::mock("mock-ddx"),
            judge: StageLlm::mock("mock-judge"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLlm {
    #[serde(flatten)]
    pub config: LlmConfig,
    /// Mock script file; omitted scripts are synthesized where the stage
    /// supports it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

impl StageLlm {
    fn mock(model: &str) -> Self {
        StageLlm {
            config: LlmConfig::mock(model),
            script: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text)?;
        Ok(())
    }

    pub fn out_path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }
}
