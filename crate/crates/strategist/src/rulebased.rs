//! Deterministic stand-in for the VLM strategist: classify the SV, match a
//! knowledge row to a background vehicle, instantiate a fixed template recipe.

use std::fmt::Write as _;

use forge_core::geometry::{Obb, Vec2};
use forge_core::guidance::{GuidancePlan, GuidanceTemplate, TemplateKind, TemplateParams};
use forge_core::{AgentId, AgentState, AgentType, Scenario};
use serde::{Deserialize, Serialize};

use crate::behavior::{classify_sv_behavior, BehaviorClass, BehaviorThresholds};
use crate::describe::describe_scenario;
use crate::error::{Result, StrategistError};
use crate::knowledge::{lookup_knowledge, AdversarialBehavior, ConflictVehicle, KnowledgeEntry};
use crate::relative::{relative, Relative};
use crate::transcript::{CoTTranscript, Stage, StageRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleConfig {
    pub thresholds: BehaviorThresholds,
    /// Simulation steps the plan covers.
    pub t_sim: usize,
    /// Step at which speed guidance hands over to interaction guidance.
    pub interact_from: usize,
    pub d_trigger: f64,
    pub speed_weight: f64,
    pub goal_weight: f64,
    pub interact_weight: f64,
    pub smooth_weight: f64,
    pub lambda: f64,
    pub n_guide: usize,
    pub k_guide_start: usize,
    /// Candidates farther than this from the SV are ignored, meters.
    pub max_range: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            thresholds: BehaviorThresholds::default(),
            t_sim: 80,
            interact_from: 30,
            d_trigger: 30.0,
            speed_weight: 1000.0,
            goal_weight: 1000.0,
            interact_weight: 1000.0,
            smooth_weight: 0.01,
            lambda: 1.0,
            n_guide: 5,
            k_guide_start: 10,
            max_range: 60.0,
        }
    }
}

/// A background vehicle fitting a knowledge row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Match {
    pub entry: KnowledgeEntry,
    pub agent: AgentId,
    pub relative: Relative,
}

fn same_direction(r: &Relative) -> bool {
    r.heading_diff.abs() < 30f64.to_radians()
}

/// Whether the segment `a`-`b` passes through the box (slab test).
fn segment_hits_box(a: Vec2, b: Vec2, obb: &Obb) -> bool {
    let la = a.to_frame(obb.center, obb.heading);
    let lb = b.to_frame(obb.center, obb.heading);
    let d = lb - la;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, dp, half) in [(la.x, d.x, 0.5 * obb.length), (la.y, d.y, 0.5 * obb.width)] {
        if dp.abs() < 1e-12 {
            if p.abs() > half {
                return false;
            }
            continue;
        }
        let (mut e0, mut e1) = ((-half - p) / dp, (half - p) / dp);
        if e0 > e1 {
            std::mem::swap(&mut e0, &mut e1);
        }
        t0 = t0.max(e0);
        t1 = t1.min(e1);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// No straight line of sight from the SV center to `target`: some other
/// agent's box lies across it. Approximates occlusion without perception.
pub fn occluded(sv: &AgentState, target: &AgentState, others: &[&AgentState]) -> bool {
    others.iter().any(|o| segment_hits_box(sv.position, target.position, &o.obb()))
}

fn on_merge_lane(scenario: &Scenario, s: &AgentState) -> bool {
    scenario
        .map
        .nearest_lane(s.position, s.heading)
        .is_some_and(|(i, p)| scenario.map.lanes[i].merge && p.distance <= scenario.map.lane_half_width)
}

/// Whether a BV at `r` fits `conflict`, given the SV's behavior.
fn fits(
    conflict: ConflictVehicle,
    r: &Relative,
    hw: f64,
    class: &BehaviorClass,
    ctx: &MatchContext<'_>,
    agent: usize,
) -> bool {
    let lat = r.lateral.abs();
    let adjacent_lane = lat > hw && lat <= 3.0 * hw;
    match conflict {
        ConflictVehicle::Adjacent => same_direction(r) && adjacent_lane && (-10.0..=60.0).contains(&r.longitudinal),
        ConflictVehicle::Leading => same_direction(r) && lat <= hw && r.longitudinal > 0.0,
        ConflictVehicle::CrossTraffic => {
            let a = r.heading_diff.abs().to_degrees();
            (60.0..=120.0).contains(&a) && r.longitudinal > 0.0
        }
        ConflictVehicle::Oncoming => r.heading_diff.abs().to_degrees() > 135.0 && r.longitudinal > 0.0,
        ConflictVehicle::Occluded => {
            let side_ok = class.side == 0 || (r.lateral > 0.0) == (class.side > 0);
            same_direction(r)
                && adjacent_lane
                && side_ok
                && (-40.0..=5.0).contains(&r.longitudinal)
                && occluded(ctx.sv, ctx.states[agent], &ctx.blockers(agent))
        }
        ConflictVehicle::MainRoad => {
            !on_merge_lane(ctx.scenario, ctx.states[agent])
                && r.heading_diff.abs().to_degrees() < 45.0
                && (-50.0..=10.0).contains(&r.longitudinal)
        }
        ConflictVehicle::Ramp => on_merge_lane(ctx.scenario, ctx.states[agent]),
    }
}

struct MatchContext<'a> {
    scenario: &'a Scenario,
    sv: &'a AgentState,
    states: Vec<&'a AgentState>,
    sv_index: usize,
}

impl<'a> MatchContext<'a> {
    fn blockers(&self, agent: usize) -> Vec<&'a AgentState> {
        self.states
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != agent && *i != self.sv_index)
            .map(|(_, s)| *s)
            .collect()
    }
}

/// First knowledge row, in table order, with a fitting BV at the start step.
/// Among fitting BVs the nearest wins, then the lowest id. Static objects and
/// BVs beyond `max_range` never match.
pub fn match_conflict(scenario: &Scenario, class: &BehaviorClass, cfg: &RuleConfig) -> Option<Match> {
    let t0 = scenario.start_step();
    let hw = scenario.map.lane_half_width;
    let sv_index = scenario.agent_index(scenario.sv_id)?;
    let ctx = MatchContext {
        scenario,
        sv: &scenario.agents[sv_index].states[t0],
        states: scenario.agents.iter().map(|a| &a.states[t0]).collect(),
        sv_index,
    };
    for entry in lookup_knowledge(class.behavior) {
        let mut best: Option<Match> = None;
        for (i, a) in scenario.agents.iter().enumerate() {
            let s = &a.states[t0];
            if i == sv_index || s.agent_type == AgentType::StaticObject {
                continue;
            }
            let r = relative(ctx.sv, s, hw);
            if r.distance > cfg.max_range || !fits(entry.conflict_vehicle, &r, hw, class, &ctx, i) {
                continue;
            }
            let better = best.is_none_or(|b| {
                r.distance < b.relative.distance || (r.distance == b.relative.distance && a.id < b.agent)
            });
            if better {
                best = Some(Match { entry, agent: a.id, relative: r });
            }
        }
        if best.is_some() {
            return best;
        }
    }
    None
}

fn template(kind: TemplateKind, params: TemplateParams, weight: f64, from: usize, to: usize) -> GuidanceTemplate {
    GuidanceTemplate { kind, params, weight, time_domain: [from as f64, to as f64], targets: Vec::new() }
}

/// Target speed for the opening window of each adversarial behavior.
fn opening_speed(behavior: AdversarialBehavior, sv: &AgentState, bv: &AgentState, limit: f64) -> f64 {
    match behavior {
        AdversarialBehavior::EmergencyBraking => 0.0,
        AdversarialBehavior::CutIn | AdversarialBehavior::TrajectoryInterference => sv.speed().max(bv.speed()),
        AdversarialBehavior::Collision | AdversarialBehavior::RearEndCollision => 1.2 * limit,
        AdversarialBehavior::RedLightRunning
        | AdversarialBehavior::TrajectoryConflict
        | AdversarialBehavior::ForcibleMerging => limit,
    }
}

/// Builds the plan for a match: speed guidance over `[0, interact_from]`,
/// interaction from `interact_from` to the end with the trigger distance,
/// and global smoothing. Lateral behaviors also aim the BV at a point in the
/// SV's lane ahead of it during the opening window.
pub fn plan_for_match(scenario: &Scenario, m: &Match, cfg: &RuleConfig) -> GuidancePlan {
    let t0 = scenario.start_step();
    let sv = &scenario.sv().states[t0];
    let bv = &scenario.track(m.agent).expect("matched agent exists").states[t0];
    let limit = scenario
        .map
        .nearest_lane(bv.position, bv.heading)
        .map_or(13.0, |(i, _)| scenario.map.lanes[i].speed_limit);
    let behavior = m.entry.adversarial_behavior;
    let switch = cfg.interact_from.min(cfg.t_sim);
    let mut templates = vec![template(
        TemplateKind::Speed,
        TemplateParams { v_target: Some(opening_speed(behavior, sv, bv, limit)), ..Default::default() },
        cfg.speed_weight,
        0,
        switch,
    )];
    if matches!(
        behavior,
        AdversarialBehavior::CutIn | AdversarialBehavior::TrajectoryInterference | AdversarialBehavior::ForcibleMerging
    ) {
        let ahead = sv.position + Vec2::from_angle(sv.heading) * (sv.speed() * switch as f64 * scenario.dt + 8.0);
        templates.push(template(
            TemplateKind::Goal,
            TemplateParams { p_goal: Some(ahead), ..Default::default() },
            cfg.goal_weight,
            0,
            switch,
        ));
    }
    templates.push(template(
        TemplateKind::Interact,
        TemplateParams { d_trigger: Some(cfg.d_trigger), ..Default::default() },
        cfg.interact_weight,
        switch,
        cfg.t_sim,
    ));
    templates.push(template(TemplateKind::Smooth, TemplateParams::default(), cfg.smooth_weight, 0, cfg.t_sim));
    GuidancePlan {
        scenario_id: scenario.id.clone(),
        adversarial_ids: vec![m.agent],
        templates,
        lambda: cfg.lambda,
        n_guide: cfg.n_guide,
        k_guide_start: cfg.k_guide_start,
        rationale: format!(
            "SV is {}; agent {} is the {} ({}, ~{:.0} m), so it is steered toward {}.",
            m.entry.sv_behavior,
            m.agent,
            m.entry.conflict_vehicle,
            m.relative.bin,
            m.relative.distance,
            m.entry.adversarial_behavior
        ),
    }
}

fn record(stage: Stage, prompt: String, content: String, parsed: Option<serde_json::Value>) -> StageRecord {
    StageRecord { stage, prompt, request: None, response: String::new(), content, parsed, error: None, timestamp: None }
}

/// Classify, match, instantiate. The transcript mirrors the three VLM
/// stages. Fails with [`StrategistError::NoPlan`] when nothing matches.
pub fn propose_plan_rulebased(scenario: &Scenario, cfg: &RuleConfig) -> Result<(GuidancePlan, CoTTranscript)> {
    let mut tr = CoTTranscript::new(&scenario.id, "rule-based");
    let class = classify_sv_behavior(scenario, &cfg.thresholds);
    let mut understanding = describe_scenario(scenario);
    let _ = write!(
        understanding,
        "\nSV behavior: {} ({:?} confidence, net heading {:.1} deg, lane offset {:.2} m)",
        class.behavior, class.confidence, class.net_heading_deg, class.lane_offset
    );
    tr.stages.push(record(
        Stage::Understanding,
        "classify SV behavior".into(),
        understanding,
        serde_json::to_value(class).ok(),
    ));
    let Some(m) = match_conflict(scenario, &class, cfg) else {
        let reason = format!("no background vehicle fits any {} row", class.behavior);
        tr.stages.push(record(Stage::Risk, "match knowledge rows".into(), reason.clone(), None));
        tr.failure = Some(reason.clone());
        return Err(StrategistError::NoPlan(reason));
    };
    tr.stages.push(record(
        Stage::Risk,
        "match knowledge rows".into(),
        format!("{}: agent {} ({})", m.entry.adversarial_behavior, m.agent, m.entry.description),
        serde_json::to_value(m).ok(),
    ));
    let plan = plan_for_match(scenario, &m, cfg);
    tr.stages.push(record(
        Stage::Formulation,
        "instantiate templates".into(),
        forge_core::guidance::plan_to_string(&plan),
        serde_json::to_value(&plan).ok(),
    ));
    tr.plan = Some(plan.clone());
    Ok((plan, tr))
}
