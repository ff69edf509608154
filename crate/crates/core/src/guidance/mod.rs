//! Guidance templates, gated composition, and the guided reverse sampler.

pub mod plan;
pub mod sampler;
pub mod templates;

pub use plan::{
    format_issues, parse_plan, plan_to_string, validate_plan, DistanceMetric, GuidancePlan, GuidanceTemplate,
    PlanIssue, PlanLimits, TemplateKind, TemplateParams,
};
pub use sampler::{guided_denoise_step, guided_sample, GuidanceSetup, GuidanceVariant, GuidedSample};
pub use templates::{
    g_goal, g_interact, g_smooth, g_speed, g_total, guidance_gradient, predict, AgentPrediction, GradientInputs,
    GuidanceEval, GuidanceState, TemplateEval,
};
