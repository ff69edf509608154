mod common;

use common::*;
use forge_core::diffusion::{make_schedule, scenario_context, ActionScale, ActionTensor, AgentContext, LinearDenoiser, SamplerSettings, ScheduleKind};
use forge_core::dynamics::{DynamicsParams, KinematicState};
use forge_core::geometry::Vec2;
use forge_core::guidance::{
    guidance_gradient, guided_sample, DistanceMetric, GradientInputs, GuidancePlan, GuidanceSetup, GuidanceState,
    GuidanceTemplate, GuidanceVariant, TemplateKind, TemplateParams,
};
use forge_core::{AgentId, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T_STEPS: usize = 81;

fn template(kind: TemplateKind, weight: f64, domain: [f64; 2]) -> GuidanceTemplate {
    let params = match kind {
        TemplateKind::Smooth => TemplateParams { w_acc: Some(1.0), w_yaw: Some(2.0), ..Default::default() },
        TemplateKind::Speed => TemplateParams { v_target: Some(12.0), ..Default::default() },
        TemplateKind::Goal => TemplateParams { p_goal: Some(Vec2::new(60.0, 10.0)), ..Default::default() },
        TemplateKind::Interact => TemplateParams { d_trigger: Some(1000.0), ..Default::default() },
    };
    GuidanceTemplate { kind, params, weight, time_domain: domain, targets: vec![] }
}

fn plan(adversarial: &[u32], templates: Vec<GuidanceTemplate>) -> GuidancePlan {
    GuidancePlan {
        scenario_id: "guide".into(),
        adversarial_ids: adversarial.iter().map(|&i| AgentId(i)).collect(),
        templates,
        lambda: 1.0,
        n_guide: 5,
        k_guide_start: 10,
        rationale: String::new(),
    }
}

/// SV plus an adversary one lane left and ahead and a follower one lane right.
fn scene() -> Scenario {
    scenario(
        "guide",
        straight_map(),
        vec![sv_straight(), cv(1, Vec2::new(20.0, 3.5), 0.0, 8.0), cv(2, Vec2::new(-20.0, -3.5), 0.0, 9.0)],
    )
}

/// The SV at constant velocity stands in for the VUT prediction.
fn guidance_state(s: &Scenario, ctx: &[AgentContext]) -> GuidanceState {
    let sv = &ctx.iter().find(|c| c.id == s.sv_id).unwrap().state;
    let vut_prediction = (1..=T_STEPS).map(|t| sv.position() + Vec2::from_angle(sv.heading) * (sv.speed * 0.1 * t as f64)).collect();
    let current_distance = ctx.iter().map(|c| (c.id, c.state.position().distance(sv.position()))).collect();
    GuidanceState { vut_prediction, current_distance }
}

fn random_initial(rng: &mut ChaCha8Rng, n: usize) -> Vec<KinematicState> {
    (0..n)
        .map(|_| KinematicState::new(rng.random_range(-30.0..30.0), rng.random_range(-10.0..10.0), rng.random_range(-0.5..0.5), rng.random_range(5.0..12.0)))
        .collect()
}

fn directional_check(p: &GuidancePlan, rng: &mut ChaCha8Rng, label: &str) {
    let n = 3;
    let ids: Vec<AgentId> = (0..n as u32).map(AgentId).collect();
    let initial = random_initial(rng, n);
    let vut: Vec<Vec2> = (1..=T_STEPS).map(|t| Vec2::new(t as f64, rng.random_range(-0.5..0.5))).collect();
    let state = GuidanceState { vut_prediction: vut, current_distance: ids.iter().map(|&i| (i, 5.0)).collect() };
    let inp = GradientInputs {
        plan: p,
        t_sim: 10,
        state: &state,
        ids: &ids,
        initial: &initial,
        scale: ActionScale::default(),
        dt: 0.1,
        dynamics: DynamicsParams::default(),
    };
    let mut mu = ActionTensor::standard_normal(n, T_STEPS - 1, rng);
    mu.data_mut().iter_mut().for_each(|v| *v *= 0.4);
    let (_, grad) = guidance_gradient(&mu, &inp).unwrap();
    let u = ActionTensor::standard_normal(n, T_STEPS - 1, rng);
    let h = 1e-5;
    let total = |m: &ActionTensor| guidance_gradient(m, &inp).unwrap().0.total;
    let fd = (total(&mu.lincomb(1.0, &u, h).unwrap()) - total(&mu.lincomb(1.0, &u, -h).unwrap())) / (2.0 * h);
    let an: f64 = grad.data().iter().zip(u.data()).map(|(g, d)| g * d).sum();
    let tol = 1e-4 * fd.abs().max(an.abs()) + 1e-8;
    assert!((fd - an).abs() < tol, "{label}: fd {fd} vs analytic {an}");
}

#[test]
fn single_template_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for kind in TemplateKind::ALL {
        let mut t = template(kind, 1.5, [0.0, 80.0]);
        if kind == TemplateKind::Goal {
            for metric in [DistanceMetric::Euclidean, DistanceMetric::Manhattan] {
                t.params.metric = Some(metric);
                for _ in 0..10 {
                    directional_check(&plan(&[1, 2], vec![t.clone()]), &mut rng, &format!("goal {metric:?}"));
                }
            }
        } else {
            for _ in 0..10 {
                directional_check(&plan(&[1, 2], vec![t.clone()]), &mut rng, kind.name());
            }
        }
    }
}

#[test]
fn composite_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for i in 0..50 {
        let count = rng.random_range(1..=4);
        let templates = (0..count)
            .map(|_| {
                let kind = TemplateKind::ALL[rng.random_range(0..4)];
                let mut t = template(kind, rng.random_range(0.1..3.0), [0.0, 80.0]);
                if rng.random_bool(0.5) {
                    t.targets = vec![AgentId(rng.random_range(1..3))];
                }
                t
            })
            .collect();
        directional_check(&plan(&[1, 2], templates), &mut rng, &format!("composite {i}"));
    }
}

#[test]
fn gating_removes_out_of_domain_and_untriggered_templates() {
    let s = scene();
    let ctx = scenario_context(&s, &[AgentId(0), AgentId(1), AgentId(2)]).unwrap();
    let state = guidance_state(&s, &ctx);
    let ids: Vec<_> = ctx.iter().map(|c| c.id).collect();
    let initial: Vec<_> = ctx.iter().map(|c| c.state).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let t_sim = rng.random_range(0..=80);
        let templates: Vec<GuidanceTemplate> = (0..rng.random_range(1..=4))
            .map(|_| {
                let a = rng.random_range(0.0..80.0f64);
                let b = rng.random_range(a..=80.0);
                let mut t = template(TemplateKind::ALL[rng.random_range(0..4)], rng.random_range(0.1..2.0), [a.floor(), b.ceil()]);
                if t.kind == TemplateKind::Interact {
                    t.params.d_trigger = Some(rng.random_range(5.0..40.0));
                }
                t
            })
            .collect();
        let full = plan(&[1, 2], templates.clone());
        let inp = |p: &GuidancePlan| {
            let mut mu = ActionTensor::zeros(3, T_STEPS - 1);
            mu.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * ((i as f64) * 0.37).sin());
            let g = GradientInputs {
                plan: p,
                t_sim,
                state: &state,
                ids: &ids,
                initial: &initial,
                scale: ActionScale::default(),
                dt: 0.1,
                dynamics: DynamicsParams::default(),
            };
            guidance_gradient(&mu, &g).unwrap()
        };
        let (eval, grad) = inp(&full);
        // Oracle gate: in the time domain, and for interact, some target
        // within its trigger distance right now (agent 1 is 20.3 m away,
        // agent 2 is 20.3 m away).
        let now = 20.0f64.hypot(3.5);
        let live: Vec<GuidanceTemplate> = templates
            .iter()
            .filter(|t| {
                let in_domain = t.time_domain[0] <= t_sim as f64 && t_sim as f64 <= t.time_domain[1];
                let triggered = t.kind != TemplateKind::Interact || now <= t.params.d_trigger.unwrap();
                in_domain && triggered
            })
            .cloned()
            .collect();
        for (e, t) in eval.templates.iter().zip(&templates) {
            let expect = live.contains(t);
            assert_eq!(e.active, expect, "{:?} at t_sim {t_sim}", t);
            if !expect {
                assert_eq!(e.contribution, 0.0);
            }
        }
        if live.is_empty() {
            assert!(grad.data().iter().all(|v| *v == 0.0));
            assert_eq!(eval.total, 0.0);
        } else {
            let (e2, g2) = inp(&plan(&[1, 2], live));
            assert!((eval.total - e2.total).abs() < 1e-9);
            assert!(grad.max_abs_diff(&g2) < 1e-9);
        }
    }
}

#[test]
fn gradient_touches_only_targeted_rows() {
    let s = scene();
    let ctx = scenario_context(&s, &[AgentId(0), AgentId(1), AgentId(2)]).unwrap();
    let state = guidance_state(&s, &ctx);
    let ids: Vec<_> = ctx.iter().map(|c| c.id).collect();
    let initial: Vec<_> = ctx.iter().map(|c| c.state).collect();
    let mut t = template(TemplateKind::Goal, 1.0, [0.0, 80.0]);
    t.targets = vec![AgentId(2)];
    let p = plan(&[1, 2], vec![t, template(TemplateKind::Speed, 1.0, [0.0, 80.0])]);
    let p_one = GuidancePlan { templates: vec![p.templates[0].clone()], ..p.clone() };
    let mu = ActionTensor::filled(3, T_STEPS - 1, 0.2);
    for (pl, rows) in [(&p, [false, true, true]), (&p_one, [false, false, true])] {
        let inp = GradientInputs {
            plan: pl,
            t_sim: 0,
            state: &state,
            ids: &ids,
            initial: &initial,
            scale: ActionScale::default(),
            dt: 0.1,
            dynamics: DynamicsParams::default(),
        };
        let (_, g) = guidance_gradient(&mu, &inp).unwrap();
        for (r, nonzero) in rows.iter().enumerate() {
            assert_eq!(g.row(r).iter().any(|v| *v != 0.0), *nonzero, "row {r}");
        }
    }
}

struct Harness {
    ctx: Vec<AgentContext>,
    state: GuidanceState,
    model: LinearDenoiser,
}

fn harness() -> Harness {
    let s = scene();
    let ctx = scenario_context(&s, &[AgentId(0), AgentId(1), AgentId(2)]).unwrap();
    let state = guidance_state(&s, &ctx);
    let model = LinearDenoiser { gain: 0.9, offset: ActionTensor::zeros(3, T_STEPS) };
    Harness { ctx, state, model }
}

impl Harness {
    fn run(&self, p: Option<&GuidancePlan>, seed: u64, variant: GuidanceVariant) -> forge_core::guidance::GuidedSample {
        let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let settings = SamplerSettings { t_fut: T_STEPS, ..SamplerSettings::default() };
        let setup = p.map(|p| GuidanceSetup { plan: p, t_sim: 0, state: self.state.clone(), variant });
        guided_sample(&self.model, &self.ctx, setup.as_ref(), seed, &sched, &settings).unwrap()
    }
}

#[test]
fn no_op_plans_are_bit_identical_to_unguided() {
    let h = harness();
    let base = plan(&[1], vec![template(TemplateKind::Goal, 1.0, [0.0, 80.0]), template(TemplateKind::Interact, 1.0, [0.0, 80.0])]);
    let zero_guide = GuidancePlan { n_guide: 0, ..base.clone() };
    let zero_lambda = GuidancePlan { lambda: 0.0, ..base.clone() };
    let mut zero_weights = base.clone();
    zero_weights.templates.iter_mut().for_each(|t| t.weight = 0.0);
    let mut out_of_domain = base.clone();
    out_of_domain.templates.iter_mut().for_each(|t| t.time_domain = [50.0, 80.0]);
    for seed in 0..5 {
        let unguided = h.run(None, seed, GuidanceVariant::Noised).output;
        for (name, p) in [("n_guide 0", &zero_guide), ("lambda 0", &zero_lambda), ("weights 0", &zero_weights), ("out of domain", &out_of_domain)] {
            for variant in [GuidanceVariant::Noised, GuidanceVariant::Denoised] {
                let g = h.run(Some(p), seed, variant).output;
                assert_eq!(g.diffusion.data(), unguided.diffusion.data(), "{name} {variant:?}");
                assert_eq!(g.trajectories, unguided.trajectories, "{name} {variant:?}");
            }
        }
        // A live plan does move the sample.
        assert_ne!(h.run(Some(&base), seed, GuidanceVariant::Noised).output.diffusion, unguided.diffusion);
    }
}

fn goal_distance(out: &forge_core::diffusion::SampleOutput, row: usize, goal: Vec2) -> f64 {
    out.trajectories[row].iter().map(|s| s.position().distance(goal)).fold(f64::INFINITY, f64::min)
}

#[test]
fn goal_guidance_wins_against_unguided() {
    let h = harness();
    let goal = Vec2::new(60.0, 10.0);
    let p = plan(&[1], vec![template(TemplateKind::Goal, 1.0, [0.0, 80.0])]);
    for variant in [GuidanceVariant::Noised, GuidanceVariant::Denoised] {
        let wins = (0..20u64)
            .filter(|&seed| {
                let g = h.run(Some(&p), seed, variant).output;
                let u = h.run(None, seed, variant).output;
                goal_distance(&g, 1, goal) < goal_distance(&u, 1, goal)
            })
            .count();
        assert!(wins >= 19, "{variant:?}: guided closer to the goal in only {wins}/20 seeds");
    }
}

#[test]
fn objective_grows_with_lambda() {
    let h = harness();
    let base = plan(&[1], vec![template(TemplateKind::Goal, 1.0, [0.0, 80.0])]);
    let mean_g = |lambda: f64| {
        let p = GuidancePlan { lambda, ..base.clone() };
        (0..10u64).map(|seed| h.run(Some(&p), seed, GuidanceVariant::Noised).eval.unwrap().total).sum::<f64>() / 10.0
    };
    let values: Vec<f64> = [0.0, 0.5, 1.0, 2.0].into_iter().map(mean_g).collect();
    for w in values.windows(2) {
        assert!(w[1] > w[0], "mean objective not increasing in lambda: {values:?}");
    }
}

#[test]
fn guided_sampling_is_reproducible() {
    let h = harness();
    let p = plan(&[1, 2], vec![template(TemplateKind::Interact, 1.0, [0.0, 80.0]), template(TemplateKind::Smooth, 0.1, [0.0, 80.0])]);
    assert_eq!(h.run(Some(&p), 9, GuidanceVariant::Denoised), h.run(Some(&p), 9, GuidanceVariant::Denoised));
}
