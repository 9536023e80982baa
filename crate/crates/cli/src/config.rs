//! Single JSON config file with sections for every subsystem. Every section
//! and field is optional and falls back to its default, so `{}` is a valid
//! config.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sfcm_core::baselines::BaselineConfig;
use sfcm_core::optimizer::{SearchBudget, Weights};
use sfcm_core::{ClusterSpec, EnvironmentState, TraceConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightsSection {
    pub balance: Weights,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub trace: TraceConfig,
    pub cluster: ClusterSpec,
    pub env: EnvironmentState,
    /// Per-epoch environment override; must cover every epoch when present.
    pub env_schedule: Option<Vec<EnvironmentState>>,
    pub budget: SearchBudget,
    pub weights: WeightsSection,
    pub baselines: BaselineConfig,
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<AppConfig, String> {
        let Some(path) = path else {
            return Ok(AppConfig::default());
        };
        let raw = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&raw).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        self.trace.validate().map_err(|e| e.to_string())?;
        self.cluster.validate().map_err(|e| e.to_string())?;
        self.env.validate().map_err(|e| e.to_string())?;
        if let Some(envs) = &self.env_schedule {
            for env in envs {
                env.validate().map_err(|e| e.to_string())?;
            }
        }
        self.budget.validate().map_err(|e| e.to_string())?;
        self.weights.balance.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}
