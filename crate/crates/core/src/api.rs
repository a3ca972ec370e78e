//! Request and response bodies of the HTTP service.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evaluator::EvaluationResult;
use crate::harness::{parse_config, ConfigOverrides, MetricsRecord, ReportStyle, RunConfig, SweepGrid, SweepOutcome};

/// Layers, lowest priority first: preset, TOML text, explicit overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toml: Option<String>,
    #[serde(default)]
    pub overrides: ConfigOverrides,
}

impl ConfigRequest {
    pub fn from_overrides(overrides: ConfigOverrides) -> Self {
        Self {
            overrides,
            ..Self::default()
        }
    }

    pub fn resolve(&self, data_root: Option<&Path>) -> Result<RunConfig> {
        let mut layered = match &self.preset {
            Some(name) => RunConfig::preset(name)?,
            None => ConfigOverrides::default(),
        };
        if let Some(text) = &self.toml {
            layered = layered.merged(ConfigOverrides::from_toml(text)?);
        }
        layered = layered.merged(self.overrides.clone());
        parse_config(&layered, data_root)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config_hash: String,
    pub config: RunConfig,
}

impl From<RunConfig> for ResolvedConfig {
    fn from(config: RunConfig) -> Self {
        Self {
            config_hash: config.hash(),
            config,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    #[serde(default)]
    pub base: ConfigRequest,
    #[serde(default)]
    pub grid: SweepGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRequest {
    #[serde(default)]
    pub config: ConfigRequest,
    pub encoder: PathBuf,
    pub memory: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRequest {
    /// A `metrics.jsonl` file or a directory containing one.
    pub metrics: PathBuf,
    pub style: ReportStyle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub records: usize,
    pub markdown: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Run,
    Sweep,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum JobResult {
    Run(Box<MetricsRecord>),
    Sweep(SweepOutcome),
    Eval(EvaluationResult),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub steps: u64,
    pub seed: Option<u64>,
    pub last_loss: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub config_hash: String,
    pub progress: JobProgress,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub id: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}
