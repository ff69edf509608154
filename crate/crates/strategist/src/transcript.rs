//! Record of one strategist session, replayable without the endpoint.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use forge_core::guidance::GuidancePlan;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, StrategistError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Understanding,
    Risk,
    Formulation,
    /// Second formulation attempt after a schema or validation failure.
    Reprompt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub prompt: String,
    /// Request body exactly as sent, if any.
    #[serde(default)]
    pub request: Option<Value>,
    /// Response body exactly as received.
    #[serde(default)]
    pub response: String,
    /// Assistant text extracted from the response.
    pub content: String,
    #[serde(default)]
    pub parsed: Option<Value>,
    #[serde(default)]
    pub error: Option<String>,
    /// Unix seconds; absent for deterministic sessions.
    #[serde(default)]
    pub timestamp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoTTranscript {
    pub scenario_id: String,
    /// Endpoint URL and model, or `rule-based`.
    pub provenance: String,
    pub stages: Vec<StageRecord>,
    pub plan: Option<GuidancePlan>,
    #[serde(default)]
    pub failure: Option<String>,
}

impl CoTTranscript {
    pub fn new(scenario_id: &str, provenance: impl Into<String>) -> Self {
        Self { scenario_id: scenario_id.to_string(), provenance: provenance.into(), stages: Vec::new(), plan: None, failure: None }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(StrategistError::Io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(StrategistError::Io)?;
        serde_json::from_str(&text).map_err(|e| StrategistError::Transcript(e.to_string()))
    }
}

pub(crate) fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}
