//! Closed-loop co-simulation: the SV is driven by an algorithm under test
//! every step, adversarial agents follow guided-diffusion samples refreshed
//! every `replan_every` steps, and everything else replays its log.

pub mod collision;
pub mod metrics;
pub mod planner;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{encode_context, ActionScale, Denoiser, NoiseSchedule, SamplerSettings};
use crate::dynamics::{rollout, step, DynamicsParams, KinematicState};
use crate::error::{Error, Result};
use crate::geometry::{Polyline, Vec2};
use crate::guidance::{
    format_issues, guided_sample, validate_plan, GuidanceEval, GuidancePlan, GuidanceSetup, GuidanceState,
    GuidanceVariant, PlanLimits,
};
use crate::scenario::{AgentId, AgentState, AgentTrack, Scenario, Window};

pub use collision::{classify_fault, detect_in_frames, impact_sector, CollisionEvent, Sector, STATIONARY_SPEED};
pub use metrics::{compute_metrics, pair_ttc, ttc_min, MetricsReport, RunSummary, TTC_CAP, T_SAFETY};
pub use planner::{
    idm_plan, Cautious, ConstantVelocity, Control, IdmParams, LaneFollower, Leader, LogReplay, Observation,
    Planner, Route,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutKind {
    #[default]
    LogReplay,
    ConstantVelocity,
    Idm,
    Cautious,
}

impl AutKind {
    pub const ALL: [AutKind; 4] = [AutKind::LogReplay, AutKind::ConstantVelocity, AutKind::Idm, AutKind::Cautious];

    pub fn name(self) -> &'static str {
        match self {
            AutKind::LogReplay => "log_replay",
            AutKind::ConstantVelocity => "constant_velocity",
            AutKind::Idm => "idm",
            AutKind::Cautious => "cautious",
        }
    }
}

impl std::str::FromStr for AutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AutKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = AutKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown AUT `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutConfig {
    pub kind: AutKind,
    pub idm: IdmParams,
    /// Cautious planner brakes below this TTC (s).
    pub ttc_threshold: f64,
    pub brake: f64,
}

impl Default for AutConfig {
    fn default() -> Self {
        Self { kind: AutKind::LogReplay, idm: IdmParams::default(), ttc_threshold: 2.0, brake: 4.0 }
    }
}

/// Builds the SV planner for `scenario`. Lane-following planners follow the
/// SV's logged path.
pub fn build_aut(cfg: &AutConfig, scenario: &Scenario) -> Box<dyn Planner> {
    let sv = scenario.sv();
    let start = scenario.start_step();
    let follower = || {
        let s0 = &sv.states[start];
        let limit = scenario
            .map
            .nearest_lane(s0.position, s0.heading)
            .map_or(13.0, |(i, _)| scenario.map.lanes[i].speed_limit);
        LaneFollower::new(Route::from_track(sv, limit), cfg.idm, DynamicsParams::default().limits)
    };
    match cfg.kind {
        AutKind::LogReplay => Box::new(LogReplay::new(sv, start)),
        AutKind::ConstantVelocity => Box::new(ConstantVelocity),
        AutKind::Idm => Box::new(follower()),
        AutKind::Cautious => {
            Box::new(Cautious { follower: follower(), ttc_threshold: cfg.ttc_threshold, brake: cfg.brake })
        }
    }
}

/// How the VUT's future is predicted for the interaction template.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VutPrediction {
    #[default]
    ConstantVelocity,
    /// Highest-probability candidate of the model's trajectory head, falling
    /// back to constant velocity for models without one.
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Simulation length in steps.
    pub t_sim: usize,
    /// Steps between adversarial replans.
    pub replan_every: usize,
    pub seed: u64,
    pub aut: AutConfig,
    pub stop_on_collision: bool,
    /// Sample adversarial agents without applying the plan's guidance.
    pub unguided: bool,
    pub variant: GuidanceVariant,
    pub vut_prediction: VutPrediction,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_sim: 80,
            replan_every: 10,
            seed: 0,
            aut: AutConfig::default(),
            stop_on_collision: true,
            unguided: false,
            variant: GuidanceVariant::Noised,
            vut_prediction: VutPrediction::ConstantVelocity,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        if self.t_sim < 1 {
            return Err(Error::Config("t_sim must be at least 1".into()));
        }
        if self.replan_every < 1 {
            return Err(Error::Config("replan_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed of the replan at step `t_sim`.
    pub fn replan_seed(&self, t_sim: usize) -> u64 {
        self.seed ^ (t_sim as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// The diffusion model with the schedule and rollout settings it samples with.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    pub model: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub settings: SamplerSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplanRecord {
    pub t_sim: usize,
    pub seed: u64,
    /// Plan evaluated on the sample; absent for unguided replans.
    pub eval: Option<GuidanceEval>,
    /// Sampled positions per adversarial agent, one per future step.
    pub trajectories: Vec<(AgentId, Vec<Vec2>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    /// Steps simulated; equals `t_sim` unless terminated early.
    pub steps: usize,
    pub terminated_by_collision: bool,
    /// Fraction of the logged SV route covered, in `[0, 1]`.
    pub progress: f64,
    pub route_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub scenario_id: String,
    pub aut: String,
    pub dt: f64,
    /// Scenario step of frame 0.
    pub start_step: usize,
    pub ids: Vec<AgentId>,
    pub sv_index: usize,
    pub adversarial_ids: Vec<AgentId>,
    /// `frames[t][i]`: state of agent `ids[i]` at simulation step `t`.
    pub frames: Vec<Vec<AgentState>>,
    pub replans: Vec<ReplanRecord>,
    pub events: Vec<CollisionEvent>,
    pub completion: Completion,
}

impl SimLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Tab-separated per-step state table.
    pub fn state_table(&self) -> String {
        let mut out = String::from("step\tagent\tx\ty\theading\tspeed\n");
        for (t, frame) in self.frames.iter().enumerate() {
            for (id, s) in self.ids.iter().zip(frame) {
                let _ = writeln!(
                    out,
                    "{t}\t{id}\t{:.4}\t{:.4}\t{:.5}\t{:.4}",
                    s.position.x,
                    s.position.y,
                    s.heading,
                    s.speed()
                );
            }
        }
        out
    }

    pub fn sv_positions(&self) -> Vec<Vec2> {
        self.frames.iter().map(|f| f[self.sv_index].position).collect()
    }

    /// States of one agent as a track.
    pub fn track(&self, id: AgentId) -> Option<AgentTrack> {
        let i = self.ids.iter().position(|a| *a == id)?;
        Some(AgentTrack { id, states: self.frames.iter().map(|f| f[i]).collect() })
    }
}

/// Fraction of `route` covered by `position`: arc length of its projection
/// over the route length, clipped to `[0, 1]`. A degenerate route counts as
/// complete.
pub fn path_completion(route: &[Vec2], position: Vec2) -> (f64, f64) {
    let mut pts: Vec<Vec2> = Vec::new();
    for &p in route {
        if pts.last().is_none_or(|q| q.distance(p) > 1e-6) {
            pts.push(p);
        }
    }
    match Polyline::new(&pts) {
        Some(line) if line.length() > 1e-3 => {
            let s = line.project(position).s;
            ((s / line.length()).clamp(0.0, 1.0), line.length())
        }
        _ => (1.0, 0.0),
    }
}

fn history_window(scenario: &Scenario, frames: &[Vec<AgentState>], t: usize, steps: usize) -> Window {
    let start = scenario.start_step();
    let tracks = scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let states = (0..steps)
                .map(|j| {
                    let back = steps - 1 - j;
                    if back > t {
                        a.states[start + t - back]
                    } else {
                        frames[t - back][i]
                    }
                })
                .collect();
            AgentTrack { id: a.id, states }
        })
        .collect();
    Window { first_step: (start + t + 1).saturating_sub(steps), tracks }
}

fn predict_vut(
    gen: &Generator<'_>,
    vut: &AgentState,
    vut_ctx: Option<&crate::diffusion::AgentContext>,
    kind: VutPrediction,
    horizon: usize,
    dt: f64,
) -> Result<Vec<Vec2>> {
    if kind == VutPrediction::Model {
        if let Some(ctx) = vut_ctx {
            if let Some(row) = gen.model.predict_actions(ctx)? {
                let acts = gen.settings.scale.to_physical(&row);
                let (traj, _) = rollout(&ctx.state, &acts, dt, &gen.settings.dynamics)?;
                return Ok(traj.iter().map(KinematicState::position).collect());
            }
        }
    }
    Ok((1..=horizon).map(|j| vut.position + vut.velocity * (j as f64 * dt)).collect())
}

/// Runs one closed-loop episode. Without a plan every background agent
/// replays its log.
pub fn run_closed_loop(
    scenario: &Scenario,
    aut: &mut dyn Planner,
    plan: Option<&GuidancePlan>,
    generator: Option<&Generator<'_>>,
    cfg: &SimConfig,
) -> Result<SimLog> {
    cfg.check()?;
    scenario.validate()?;
    let start = scenario.start_step();
    if start + cfg.t_sim > scenario.horizon() {
        return Err(Error::Config(format!(
            "t_sim {} from step {start} runs past the logged horizon {}",
            cfg.t_sim,
            scenario.horizon()
        )));
    }
    let gen = match (plan, generator) {
        (Some(_), None) => return Err(Error::Config("a guidance plan needs a diffusion model".into())),
        (Some(p), Some(g)) => {
            let limits = PlanLimits { t_sim: cfg.t_sim, k_steps: g.schedule.steps() };
            validate_plan(p, scenario, &limits).map_err(|e| Error::Plan(format_issues(&e)))?;
            Some(g)
        }
        (None, _) => None,
    };
    let ids: Vec<AgentId> = scenario.agents.iter().map(|a| a.id).collect();
    let sv_index = scenario.agent_index(scenario.sv_id).expect("validated");
    let adv_ids: Vec<AgentId> = plan.map(|p| p.adversarial_ids.clone()).unwrap_or_default();
    let adv_index: Vec<usize> = adv_ids.iter().map(|id| scenario.agent_index(*id).expect("validated")).collect();
    let dt = scenario.dt;
    let dp = DynamicsParams::default();

    let mut frames: Vec<Vec<AgentState>> = vec![scenario.agents.iter().map(|a| a.states[start]).collect()];
    let mut replans = Vec::new();
    let mut events: Vec<CollisionEvent> = Vec::new();
    let mut hit = vec![false; ids.len()];
    // Sampled future states of each adversarial agent and the step they start after.
    let mut adv_plan: Vec<Vec<AgentState>> = vec![Vec::new(); adv_ids.len()];
    let mut last_replan = 0usize;
    let mut terminated = false;

    let record = |t: usize, frame: &[AgentState], hit: &mut [bool], events: &mut Vec<CollisionEvent>| {
        for (i, o) in frame.iter().enumerate() {
            if i == sv_index || hit[i] {
                continue;
            }
            if let Some(e) = collision::contact_event(t, t as f64 * dt, &frame[sv_index], ids[i], o) {
                hit[i] = true;
                events.push(e);
            }
        }
    };
    record(0, &frames[0], &mut hit, &mut events);
    if cfg.stop_on_collision && !events.is_empty() {
        terminated = true;
    }

    for t in 0..cfg.t_sim {
        if terminated {
            break;
        }
        let cur = frames[t].clone();
        if let (Some(plan), Some(gen)) = (plan, gen) {
            if t % cfg.replan_every == 0 {
                let hist = history_window(scenario, &frames, t, crate::diffusion::context::HISTORY_STEPS);
                let time = (start + t) as f64 * dt;
                let horizon_s = gen.settings.t_fut as f64 * dt;
                let mut targets = adv_ids.clone();
                let want_vut_ctx = cfg.vut_prediction == VutPrediction::Model;
                if want_vut_ctx {
                    targets.push(scenario.sv_id);
                }
                let mut ctx = encode_context(&hist, &scenario.map, &scenario.signals, time, dt, horizon_s, &targets)?;
                let vut_ctx = if want_vut_ctx { ctx.pop() } else { None };
                let sv = &cur[sv_index];
                let state = GuidanceState {
                    vut_prediction: predict_vut(gen, sv, vut_ctx.as_ref(), cfg.vut_prediction, gen.settings.t_fut, dt)?,
                    current_distance: adv_ids
                        .iter()
                        .zip(&adv_index)
                        .map(|(id, &i)| (*id, cur[i].position.distance(sv.position)))
                        .collect(),
                };
                let setup = GuidanceSetup { plan, t_sim: t, state, variant: cfg.variant };
                let seed = cfg.replan_seed(t);
                let s = guided_sample(
                    gen.model,
                    &ctx,
                    (!cfg.unguided).then_some(&setup),
                    seed,
                    gen.schedule,
                    &gen.settings,
                )?;
                let mut trajectories = Vec::with_capacity(adv_ids.len());
                for (j, &i) in adv_index.iter().enumerate() {
                    let traj = &s.output.trajectories[j];
                    adv_plan[j] = traj.iter().map(|k| cur[i].with_kinematic(k)).collect();
                    trajectories.push((adv_ids[j], traj.iter().map(KinematicState::position).collect()));
                }
                last_replan = t;
                replans.push(ReplanRecord { t_sim: t, seed, eval: s.eval, trajectories });
            }
        }

        let others: Vec<(AgentId, AgentState)> = ids
            .iter()
            .zip(&cur)
            .enumerate()
            .filter(|(i, _)| *i != sv_index)
            .map(|(_, (id, s))| (*id, *s))
            .collect();
        let obs = Observation {
            t_sim: t,
            time: (start + t) as f64 * dt,
            dt,
            sv: &cur[sv_index],
            others: &others,
            map: &scenario.map,
            signals: &scenario.signals,
        };
        let sv_next = match aut.control(&obs) {
            Control::Place(s) => s,
            Control::Act(a) => {
                let k = step(&cur[sv_index].kinematic(), a, dt, &dp)?;
                cur[sv_index].with_kinematic(&k)
            }
        };

        let mut next: Vec<AgentState> = scenario.agents.iter().map(|a| a.states[start + t + 1]).collect();
        next[sv_index] = sv_next;
        for (j, &i) in adv_index.iter().enumerate() {
            let k = (t - last_replan).min(adv_plan[j].len().saturating_sub(1));
            if let Some(s) = adv_plan[j].get(k) {
                next[i] = *s;
            }
        }

        record(t + 1, &next, &mut hit, &mut events);
        frames.push(next);
        if cfg.stop_on_collision && !events.is_empty() {
            terminated = true;
        }
    }
    events.sort_by(|a, b| a.step.cmp(&b.step).then(a.other.cmp(&b.other)));

    let route: Vec<Vec2> = scenario.sv().states[start..=start + cfg.t_sim].iter().map(|s| s.position).collect();
    let (progress, route_length) = path_completion(&route, frames.last().unwrap()[sv_index].position);
    Ok(SimLog {
        scenario_id: scenario.id.clone(),
        aut: aut.name().to_string(),
        dt,
        start_step: start,
        ids,
        sv_index,
        adversarial_ids: adv_ids,
        completion: Completion { steps: frames.len() - 1, terminated_by_collision: terminated, progress, route_length },
        frames,
        replans,
        events,
    })
}

/// Recomputes collision events from a log's frames.
pub fn detect_collisions(log: &SimLog) -> Vec<CollisionEvent> {
    detect_in_frames(&log.frames, &log.ids, log.sv_index, log.dt)
}

/// Runs `n` independent jobs in parallel; results keep job order.
pub fn run_batch<F>(n: usize, job: F) -> Vec<Result<SimLog>>
where
    F: Fn(usize) -> Result<SimLog> + Sync + Send,
{
    (0..n).into_par_iter().map(job).collect()
}

/// Sampler settings matching a scenario's timing.
pub fn sampler_settings(scenario: &Scenario, t_fut: usize, scale: ActionScale) -> SamplerSettings {
    SamplerSettings { t_fut, dt: scenario.dt, scale, dynamics: DynamicsParams::default() }
}
