//! Pieces shared by the commands: plan proposal, original/generated run
//! pairs, and the evaluation report.

use std::fmt::Write as _;

use forge_core::guidance::{format_issues, GuidancePlan, PlanLimits};
use forge_core::sim::metrics::aggregate;
use forge_core::sim::{build_aut, run_closed_loop, AutConfig, AutKind, Generator, MetricsReport, RunSummary, SimConfig, SimLog};
use forge_core::Scenario;
use forge_strategist::{
    propose_plan_rulebased, propose_plan_vlm, render_comparison, replay_transcript, validate_plan, CoTTranscript,
    HttpBackend, RenderOptions, Scene, StrategistError, VlmOptions,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{transcript_for, LoadedModel};
use crate::config::{GuidanceOverrides, RunConfig, StrategistMode};
use crate::error::{CliError, Result};

pub fn plan_limits(cfg: &RunConfig) -> PlanLimits {
    PlanLimits { t_sim: cfg.sim.t_sim, k_steps: cfg.model.k_steps }
}

pub fn apply_overrides(mut plan: GuidancePlan, o: &GuidanceOverrides) -> GuidancePlan {
    if let Some(l) = o.lambda {
        plan.lambda = l;
    }
    if let Some(n) = o.n_guide {
        plan.n_guide = n;
    }
    if let Some(k) = o.k_guide_start {
        plan.k_guide_start = k;
    }
    plan
}

/// Runs the configured strategist, applies the guidance overrides and
/// validates the result.
pub fn propose(s: &Scenario, cfg: &RunConfig) -> Result<(GuidancePlan, CoTTranscript)> {
    let st = &cfg.strategist;
    let limits = plan_limits(cfg);
    let vlm = VlmOptions { limits, ..st.vlm };
    let (plan, transcript) = match st.mode {
        StrategistMode::RuleBased => {
            let rules = forge_strategist::RuleConfig { t_sim: cfg.sim.t_sim, ..st.rules };
            propose_plan_rulebased(s, &rules)?
        }
        StrategistMode::Vlm => propose_plan_vlm(s, &mut HttpBackend::new(st.endpoint.clone()), &vlm)?,
        StrategistMode::Replay => {
            let source = st
                .transcript
                .as_ref()
                .ok_or_else(|| CliError::Config("replay mode needs strategist.transcript".into()))?;
            let tr = transcript_for(source, s)?;
            (replay_transcript(s, &tr, &vlm)?, tr)
        }
    };
    let plan = apply_overrides(plan, &cfg.guidance);
    validate_plan(&plan, s, &limits)
        .map_err(|issues| CliError::Config(format!("plan after overrides: {}", format_issues(&issues))))?;
    Ok((plan, transcript))
}

fn run_one(s: &Scenario, plan: Option<&GuidancePlan>, gen: &Generator<'_>, sim: &SimConfig) -> Result<SimLog> {
    let mut aut = build_aut(&sim.aut, s);
    Ok(run_closed_loop(s, aut.as_mut(), plan, Some(gen), sim)?)
}

/// The original run samples the same plan's agents without guidance; the
/// generated run applies it. Both share the seed.
pub fn run_pair(s: &Scenario, plan: &GuidancePlan, gen: &Generator<'_>, sim: &SimConfig) -> Result<(SimLog, SimLog)> {
    let original = SimConfig { unguided: true, ..*sim };
    let generated = SimConfig { unguided: false, ..*sim };
    let (a, b) = rayon::join(|| run_one(s, Some(plan), gen, &original), || run_one(s, Some(plan), gen, &generated));
    Ok((a?, b?))
}

#[derive(Clone, Debug, Serialize)]
pub struct PairSummary {
    pub original: RunSummary,
    pub generated: RunSummary,
}

pub fn pair_summary(original: &SimLog, generated: &SimLog) -> PairSummary {
    PairSummary { original: RunSummary::of(original), generated: RunSummary::of(generated) }
}

pub fn scene_from_log<'a>(s: &'a Scenario, log: &SimLog) -> Scene<'a> {
    Scene {
        map: &s.map,
        signals: &s.signals,
        dt: log.dt,
        sv_id: log.ids[log.sv_index],
        first_step: log.start_step,
        tracks: log.ids.iter().enumerate().map(|(i, id)| (*id, log.frames.iter().map(|f| f[i]).collect())).collect(),
    }
}

pub fn comparison_svg(s: &Scenario, original: &SimLog, generated: &SimLog, opts: &RenderOptions) -> String {
    let (a, b) = (scene_from_log(s, original), scene_from_log(s, generated));
    render_comparison(("original", &a), ("generated", &b), opts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AutReport {
    pub aut: AutKind,
    pub original: MetricsReport,
    pub generated: MetricsReport,
    /// Generated over original CR_fault; absent when the original is 0.
    pub cr_fault_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub scenarios: usize,
    pub seeds: Vec<u64>,
    /// Scenarios the strategist declined; they run without a plan in both sets.
    pub no_plan: Vec<String>,
    pub results: Vec<AutReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} {:<10} {:>7} {:>9} {:>8} {:>11} {:>7}",
            "AUT", "set", "CR", "CR_fault", "TTC_min", "E_highrisk", "PC"
        );
        for r in &self.results {
            for (set, m) in [("original", &r.original), ("generated", &r.generated)] {
                let ttc = m.mean_ttc_min.map_or_else(|| "-".to_string(), |t| format!("{t:.2}"));
                let _ = writeln!(
                    out,
                    "{:<18} {:<10} {:>7.1} {:>9.1} {:>8} {:>11.1} {:>7.1}",
                    r.aut.name(),
                    set,
                    m.cr,
                    m.cr_fault,
                    ttc,
                    m.e_highrisk,
                    m.pc
                );
            }
        }
        for r in &self.results {
            let ratio = r.cr_fault_ratio.map_or_else(|| "n/a (original 0)".to_string(), |x| format!("{x:.2}x"));
            let _ = writeln!(out, "CR_fault ratio {}: {ratio}", r.aut.name());
        }
        out
    }
}

/// Original and generated runs of every scenario, per AUT and seed. Plans are
/// proposed once per scenario.
pub fn evaluate_suite(scenarios: &[Scenario], model: &LoadedModel, cfg: &RunConfig) -> Result<EvalReport> {
    let plans: Vec<Option<GuidancePlan>> = scenarios
        .par_iter()
        .map(|s| match propose(s, cfg) {
            Ok((p, _)) => Ok(Some(p)),
            Err(CliError::Strategist(StrategistError::NoPlan(_))) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let no_plan = scenarios.iter().zip(&plans).filter(|(_, p)| p.is_none()).map(|(s, _)| s.id.clone()).collect();
    let seeds = &cfg.eval.seeds;
    let mut results = Vec::new();
    for &aut in &cfg.eval.auts {
        let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|i| seeds.iter().map(move |&k| (i, k))).collect();
        let runs: Vec<(RunSummary, RunSummary)> = jobs
            .par_iter()
            .map(|&(i, seed)| {
                let s = &scenarios[i];
                let sim = SimConfig { seed, aut: AutConfig { kind: aut, ..cfg.sim.aut }, ..cfg.sim };
                let gen = model.generator(s);
                match &plans[i] {
                    Some(plan) => {
                        let (o, g) = run_pair(s, plan, &gen, &sim)?;
                        Ok((RunSummary::of(&o), RunSummary::of(&g)))
                    }
                    None => {
                        let log = run_one(s, None, &gen, &sim)?;
                        let r = RunSummary::of(&log);
                        Ok((r, r))
                    }
                }
            })
            .collect::<Result<_>>()?;
        let (o, g): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
        let original = aggregate(&o)?;
        let generated = aggregate(&g)?;
        let cr_fault_ratio = (original.cr_fault > 0.0).then(|| generated.cr_fault / original.cr_fault);
        results.push(AutReport { aut, original, generated, cr_fault_ratio });
    }
    Ok(EvalReport { scenarios: scenarios.len(), seeds: seeds.clone(), no_plan, results })
}
