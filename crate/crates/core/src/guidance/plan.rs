//! Guidance plan document, parsing with field paths, and validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::scenario::{AgentId, AgentType, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Smooth,
    Speed,
    Goal,
    Interact,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] =
        [TemplateKind::Smooth, TemplateKind::Speed, TemplateKind::Goal, TemplateKind::Interact];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Smooth => "smooth",
            TemplateKind::Speed => "speed",
            TemplateKind::Goal => "goal",
            TemplateKind::Interact => "interact",
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Manhattan,
}

/// Kind-specific parameters; which fields are required depends on the kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_goal: Option<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<DistanceMetric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_trigger: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceTemplate {
    pub kind: TemplateKind,
    #[serde(default)]
    pub params: TemplateParams,
    pub weight: f64,
    /// Active window `[t_s, t_e]` in simulation steps, inclusive.
    pub time_domain: [f64; 2],
    /// Agents the template applies to; empty means every adversarial agent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<AgentId>,
}

impl GuidanceTemplate {
    pub fn in_domain(&self, t_sim: usize) -> bool {
        let t = t_sim as f64;
        self.time_domain[0] <= t && t <= self.time_domain[1]
    }

    pub fn targets_in<'a>(&'a self, plan: &'a GuidancePlan) -> &'a [AgentId] {
        if self.targets.is_empty() {
            &plan.adversarial_ids
        } else {
            &self.targets
        }
    }

    pub fn w_acc(&self) -> f64 {
        self.params.w_acc.unwrap_or(1.0)
    }

    pub fn w_yaw(&self) -> f64 {
        self.params.w_yaw.unwrap_or(1.0)
    }
}

fn default_lambda() -> f64 {
    1.0
}

fn default_n_guide() -> usize {
    5
}

fn default_k_guide_start() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidancePlan {
    pub scenario_id: String,
    pub adversarial_ids: Vec<AgentId>,
    pub templates: Vec<GuidanceTemplate>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_n_guide")]
    pub n_guide: usize,
    #[serde(default = "default_k_guide_start")]
    pub k_guide_start: usize,
    #[serde(default)]
    pub rationale: String,
}

/// One validation or schema problem, located by a field path such as
/// `templates[1].time_domain`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanIssue {
    pub path: String,
    pub message: String,
}

impl PlanIssue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for PlanIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// Joins issues one per line, for error messages and reprompts.
pub fn format_issues(issues: &[PlanIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n")
}

/// Parses a plan document. Schema errors come back as a single issue
/// carrying the path of the offending field.
pub fn parse_plan(text: &str) -> std::result::Result<GuidancePlan, Vec<PlanIssue>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        vec![PlanIssue::new(path, inner.to_string())]
    })
}

pub fn plan_to_string(plan: &GuidancePlan) -> String {
    serde_json::to_string_pretty(plan).expect("plan serialization is infallible")
}

/// Bounds a plan is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanLimits {
    /// Simulation length in steps; time domains must lie in `[0, t_sim]`.
    pub t_sim: usize,
    /// Diffusion steps `K`.
    pub k_steps: usize,
}

impl Default for PlanLimits {
    fn default() -> Self {
        Self { t_sim: 80, k_steps: 50 }
    }
}

/// Checks a plan against a scenario. Returns every problem found.
pub fn validate_plan(
    plan: &GuidancePlan,
    scenario: &Scenario,
    limits: &PlanLimits,
) -> std::result::Result<(), Vec<PlanIssue>> {
    let mut issues = Vec::new();
    let mut err = |p: String, m: String| issues.push(PlanIssue::new(p, m));

    if plan.scenario_id != scenario.id {
        err("scenario_id".into(), format!("`{}` does not match scenario `{}`", plan.scenario_id, scenario.id));
    }
    if plan.adversarial_ids.is_empty() {
        err("adversarial_ids".into(), "at least one adversarial agent is required".into());
    }
    let start = scenario.start_step();
    for (i, id) in plan.adversarial_ids.iter().enumerate() {
        let path = format!("adversarial_ids[{i}]");
        match scenario.track(*id) {
            None => err(path, format!("agent {id} does not exist in scenario `{}`", scenario.id)),
            Some(_) if *id == scenario.sv_id => err(path, format!("agent {id} is the subject vehicle")),
            Some(t) if t.states[start].agent_type == AgentType::StaticObject => {
                err(path, format!("agent {id} is a static object"))
            }
            Some(_) => {}
        }
        if plan.adversarial_ids[..i].contains(id) {
            err(format!("adversarial_ids[{i}]"), format!("agent {id} listed twice"));
        }
    }
    if !(plan.lambda >= 0.0 && plan.lambda.is_finite()) {
        err("lambda".into(), format!("must be finite and >= 0, got {}", plan.lambda));
    }
    if plan.k_guide_start < 1 || plan.k_guide_start > limits.k_steps {
        err(
            "k_guide_start".into(),
            format!("must lie in [1, K = {}], got {}", limits.k_steps, plan.k_guide_start),
        );
    }
    if plan.templates.is_empty() {
        err("templates".into(), "at least one template is required".into());
    } else if plan.templates.iter().all(|t| t.kind == TemplateKind::Smooth) {
        err("templates".into(), "at least one non-smooth template is required".into());
    }
    for (j, t) in plan.templates.iter().enumerate() {
        let p = |f: &str| format!("templates[{j}].{f}");
        if !(t.weight >= 0.0 && t.weight.is_finite()) {
            err(p("weight"), format!("must be finite and >= 0, got {}", t.weight));
        }
        let [ts, te] = t.time_domain;
        if !(ts.is_finite() && te.is_finite()) {
            err(p("time_domain"), "bounds must be finite".into());
        } else {
            if ts > te {
                err(p("time_domain"), format!("t_s > t_e ({ts} > {te})"));
            }
            if ts < 0.0 || te > limits.t_sim as f64 {
                err(
                    p("time_domain"),
                    format!("[{ts}, {te}] outside the simulation window [0, {}]", limits.t_sim),
                );
            }
        }
        for (n, id) in t.targets.iter().enumerate() {
            if !plan.adversarial_ids.contains(id) {
                err(format!("templates[{j}].targets[{n}]"), format!("agent {id} is not an adversarial agent"));
            }
        }
        let need = |present: bool, field: &str, issues: &mut Vec<(String, String)>| {
            if !present {
                issues.push((p(&format!("params.{field}")), format!("required for `{}` templates", t.kind)));
            }
        };
        let mut missing = Vec::new();
        let tp = &t.params;
        match t.kind {
            TemplateKind::Smooth => {
                for (name, v) in [("w_acc", tp.w_acc), ("w_yaw", tp.w_yaw)] {
                    if let Some(v) = v {
                        if !(v >= 0.0 && v.is_finite()) {
                            missing.push((p(&format!("params.{name}")), format!("must be finite and >= 0, got {v}")));
                        }
                    }
                }
            }
            TemplateKind::Speed => {
                need(tp.v_target.is_some(), "v_target", &mut missing);
                if let Some(v) = tp.v_target {
                    if !(v >= 0.0 && v.is_finite()) {
                        missing.push((p("params.v_target"), format!("must be finite and >= 0, got {v}")));
                    }
                }
            }
            TemplateKind::Goal => {
                need(tp.p_goal.is_some(), "p_goal", &mut missing);
                if let Some(g) = tp.p_goal {
                    if !g.is_finite() {
                        missing.push((p("params.p_goal"), "must be finite".into()));
                    }
                }
            }
            TemplateKind::Interact => {
                need(tp.d_trigger.is_some(), "d_trigger", &mut missing);
                if let Some(d) = tp.d_trigger {
                    if !(d > 0.0 && d.is_finite()) {
                        missing.push((p("params.d_trigger"), format!("must be > 0, got {d}")));
                    }
                }
                if t.targets_in(plan).is_empty() {
                    missing.push((p("targets"), "interact needs a non-empty adversarial set".into()));
                }
            }
        }
        for (path, m) in missing {
            err(path, m);
        }
    }
    drop(err);
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}
