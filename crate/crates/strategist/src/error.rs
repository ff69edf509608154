use forge_core::guidance::PlanIssue;
use thiserror::Error;

use crate::transcript::CoTTranscript;

#[derive(Debug, Error)]
pub enum StrategistError {
    /// No background vehicle fits any knowledge row.
    #[error("no plan: {0}")]
    NoPlan(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    /// Stage-3 output still invalid after the reprompt.
    #[error("strategist failure: {}", forge_core::guidance::format_issues(.issues))]
    Schema { issues: Vec<PlanIssue>, transcript: Box<CoTTranscript> },
    #[error("transcript error: {0}")]
    Transcript(String),
    #[error("render error: {0}")]
    Render(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StrategistError>;
