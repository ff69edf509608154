//! Scenario understanding and guidance-plan proposal.
//!
//! Two strategists share one output contract: [`propose_plan_vlm`] drives a
//! vision-language endpoint through three prompted stages, and
//! [`propose_plan_rulebased`] applies the knowledge table deterministically.
//! Both return a validated [`GuidancePlan`] and a [`CoTTranscript`].

pub mod behavior;
pub mod describe;
pub mod error;
pub mod knowledge;
pub mod relative;
pub mod render;
pub mod rulebased;
pub mod transcript;
pub mod vlm;

pub use behavior::{classify_sv_behavior, BehaviorClass, BehaviorThresholds, Confidence};
pub use describe::describe_scenario;
pub use error::{Result, StrategistError};
pub use forge_core::guidance::{validate_plan, GuidancePlan, PlanLimits};
pub use knowledge::{lookup_knowledge, AdversarialBehavior, ConflictVehicle, KnowledgeEntry, SvBehavior, KNOWLEDGE_DB};
pub use render::{rasterize, render_bev, render_comparison, RenderOptions, Scene};
pub use rulebased::{match_conflict, propose_plan_rulebased, RuleConfig};
pub use transcript::{CoTTranscript, Stage, StageRecord};
pub use vlm::{propose_plan_vlm, replay_transcript, ChatBackend, EndpointConfig, HttpBackend, ReplayBackend, VlmOptions};

use forge_core::Scenario;

/// Text and image inputs handed to a strategist.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioBrief {
    pub description: String,
    pub svg: String,
    pub png: Option<Vec<u8>>,
}

/// Builds the description and BEV for a scenario. Rasterizes only when asked.
pub fn scenario_brief(scenario: &Scenario, raster: bool) -> Result<ScenarioBrief> {
    let svg = render_bev(scenario);
    let png = if raster { Some(rasterize(&svg)?) } else { None };
    Ok(ScenarioBrief { description: describe_scenario(scenario), svg, png })
}
