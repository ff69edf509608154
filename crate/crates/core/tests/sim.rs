mod common;

use common::*;
use forge_core::diffusion::{make_schedule, ActionScale, ActionTensor, LinearDenoiser, ScheduleKind};
use forge_core::geometry::Vec2;
use forge_core::guidance::{GuidancePlan, GuidanceTemplate, TemplateKind, TemplateParams};
use forge_core::scenario::BBox;
use forge_core::sim::collision::{contact_event, sector_for_angle};
use forge_core::sim::metrics::{aggregate, ttc_raw};
use forge_core::sim::{
    build_aut, compute_metrics, detect_collisions, pair_ttc, path_completion, run_batch, run_closed_loop,
    sampler_settings, AutConfig, AutKind, Generator, RunSummary, Sector, SimConfig, SimLog, TTC_CAP,
};
use forge_core::{AgentId, AgentState, AgentType, Scenario};
use proptest::prelude::*;

fn state(kind: AgentType, x: f64, y: f64, heading: f64, speed: f64) -> AgentState {
    AgentState { agent_type: kind, position: Vec2::new(x, y), heading, velocity: Vec2::from_angle(heading) * speed, bbox: BBox::CAR }
}

fn busy_scene() -> Scenario {
    scenario(
        "busy",
        straight_map(),
        vec![sv_straight(), cv(1, Vec2::new(25.0, 3.5), 0.0, 7.0), cv(2, Vec2::new(-15.0, -3.5), 0.0, 11.0), parked(3, Vec2::new(150.0, -3.5), 0.0)],
    )
}

fn cut_in_plan() -> GuidancePlan {
    GuidancePlan {
        scenario_id: "busy".into(),
        adversarial_ids: vec![AgentId(1)],
        templates: vec![
            GuidanceTemplate {
                kind: TemplateKind::Interact,
                params: TemplateParams { d_trigger: Some(40.0), ..Default::default() },
                weight: 1.0,
                time_domain: [0.0, 80.0],
                targets: vec![],
            },
            GuidanceTemplate {
                kind: TemplateKind::Smooth,
                params: TemplateParams::default(),
                weight: 0.05,
                time_domain: [0.0, 80.0],
                targets: vec![],
            },
        ],
        lambda: 1.0,
        n_guide: 5,
        k_guide_start: 10,
        rationale: "cut in".into(),
    }
}

fn model() -> LinearDenoiser {
    LinearDenoiser { gain: 0.9, offset: ActionTensor::zeros(1, 81) }
}

fn run(s: &Scenario, plan: Option<&GuidancePlan>, cfg: &SimConfig) -> SimLog {
    let m = model();
    let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
    let gen = Generator { model: &m, schedule: &sched, settings: sampler_settings(s, 81, ActionScale::default()) };
    let mut aut = build_aut(&cfg.aut, s);
    run_closed_loop(s, aut.as_mut(), plan, Some(&gen), cfg).unwrap()
}

#[test]
fn log_replay_without_plan_reproduces_the_log() {
    let s = busy_scene();
    let log = run(&s, None, &SimConfig::default());
    assert_eq!(log.frames.len(), 81);
    assert!(log.replans.is_empty() && log.events.is_empty());
    for (t, frame) in log.frames.iter().enumerate() {
        for (i, a) in s.agents.iter().enumerate() {
            assert_eq!(frame[i], a.states[s.start_step() + t], "agent {} step {t}", a.id);
        }
    }
    assert_eq!(log.completion.progress, 1.0);
    let oracle = log
        .frames
        .iter()
        .flat_map(|f| f[1..].iter().map(|o| pair_ttc(&f[0], o)).collect::<Vec<_>>())
        .fold(TTC_CAP, f64::min);
    assert_eq!(RunSummary::of(&log).ttc_min, oracle);
}

#[test]
fn replans_on_schedule_and_runs_are_deterministic() {
    let s = busy_scene();
    let cfg = SimConfig { aut: AutConfig { kind: AutKind::Idm, ..Default::default() }, stop_on_collision: false, seed: 4, ..Default::default() };
    let plan = cut_in_plan();
    let a = run(&s, Some(&plan), &cfg);
    let b = run(&s, Some(&plan), &cfg);
    assert_eq!(a, b);
    let times: Vec<usize> = a.replans.iter().map(|r| r.t_sim).collect();
    assert_eq!(times, vec![0, 10, 20, 30, 40, 50, 60, 70]);
    assert!(a.replans.iter().all(|r| r.eval.is_some() && r.trajectories.len() == 1));
    // Agents outside the plan replay their logs.
    for (t, frame) in a.frames.iter().enumerate() {
        assert_eq!(frame[2], s.agents[2].states[s.start_step() + t]);
    }
    let c = run(&s, Some(&plan), &SimConfig { seed: 5, ..cfg });
    assert_ne!(a.frames, c.frames);

    let batch = run_batch(3, |i| {
        let m = model();
        let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let gen = Generator { model: &m, schedule: &sched, settings: sampler_settings(&s, 81, ActionScale::default()) };
        let cfg = SimConfig { seed: 4 + i as u64, ..cfg };
        run_closed_loop(&s, build_aut(&cfg.aut, &s).as_mut(), Some(&plan), Some(&gen), &cfg)
    });
    assert_eq!(batch[0].as_ref().unwrap(), &a);
    assert_eq!(batch[1].as_ref().unwrap(), &c);

    let unguided = run(&s, Some(&plan), &SimConfig { unguided: true, ..cfg });
    assert!(unguided.replans.iter().all(|r| r.eval.is_none()));
}

#[test]
fn log_round_trips_and_events_recompute() {
    let s = busy_scene();
    let cfg = SimConfig { aut: AutConfig { kind: AutKind::ConstantVelocity, ..Default::default() }, stop_on_collision: false, ..Default::default() };
    let log = run(&s, Some(&cut_in_plan()), &cfg);
    assert_eq!(detect_collisions(&log), log.events);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.json");
    log.save(&path).unwrap();
    assert_eq!(SimLog::load(&path).unwrap(), log);
    assert!(log.state_table().lines().count() == 1 + 81 * 4);
}

#[test]
fn driving_into_a_parked_car_is_at_fault_and_stops_the_run() {
    let s = scenario("wall", straight_map(), vec![sv_straight(), parked(1, Vec2::new(30.0, 0.0), 0.0)]);
    let cfg = SimConfig { aut: AutConfig { kind: AutKind::ConstantVelocity, ..Default::default() }, ..Default::default() };
    let mut aut = build_aut(&cfg.aut, &s);
    let log = run_closed_loop(&s, aut.as_mut(), None, None, &cfg).unwrap();
    assert_eq!(log.events.len(), 1);
    let e = &log.events[0];
    assert!(e.at_fault && e.sector == Sector::Front && e.other == AgentId(1));
    // Boxes touch once the gap of 30 - 4.6 m closes at 10 m/s.
    assert_eq!(e.step, 26);
    assert!(log.completion.terminated_by_collision);
    assert_eq!(log.completion.steps, 26);
    assert!(compute_metrics(&[log]).unwrap().cr_fault == 100.0);
}

#[test]
fn plan_without_model_and_bad_plans_are_rejected() {
    let s = busy_scene();
    let cfg = SimConfig::default();
    let mut aut = build_aut(&cfg.aut, &s);
    assert!(run_closed_loop(&s, aut.as_mut(), Some(&cut_in_plan()), None, &cfg).is_err());
    let m = model();
    let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
    let gen = Generator { model: &m, schedule: &sched, settings: sampler_settings(&s, 81, ActionScale::default()) };
    let mut bad = cut_in_plan();
    bad.adversarial_ids = vec![AgentId(0)];
    assert!(run_closed_loop(&s, aut.as_mut(), Some(&bad), Some(&gen), &cfg).is_err());
    assert!(run_closed_loop(&s, aut.as_mut(), None, None, &SimConfig { t_sim: 200, ..cfg }).is_err());
}

#[test]
fn fault_table() {
    use AgentType::*;
    // (SV speed, other position, other type) -> (sector, at fault)
    let cases = [
        (5.0, (4.0, 0.0), Vehicle, Sector::Front, true),
        (5.0, (0.5, 1.8), Vehicle, Sector::Side, true),
        (5.0, (-4.0, 0.0), Vehicle, Sector::Rear, false),
        (0.05, (4.0, 0.0), Vehicle, Sector::Front, false),
        (0.05, (0.5, 1.8), Vehicle, Sector::Side, false),
        (0.05, (-4.0, 0.0), Vehicle, Sector::Rear, false),
        (5.0, (-4.0, 0.0), StaticObject, Sector::Rear, true),
        (0.0, (4.0, 0.0), StaticObject, Sector::Front, false),
    ];
    for (v, (x, y), kind, sector, fault) in cases {
        let sv = state(Vehicle, 0.0, 0.0, 0.3, v);
        let p = Vec2::new(x, y).rotate(0.3);
        let other = state(kind, p.x, p.y, 0.3, 3.0);
        let e = contact_event(3, 0.3, &sv, AgentId(9), &other).expect("boxes overlap");
        assert_eq!((e.sector, e.at_fault), (sector, fault), "v {v} at ({x}, {y}) {kind:?}");
    }
    assert!(contact_event(0, 0.0, &state(Vehicle, 0.0, 0.0, 0.0, 1.0), AgentId(1), &state(Vehicle, 4.7, 0.0, 0.0, 1.0)).is_none());
    assert_eq!(sector_for_angle(std::f64::consts::FRAC_PI_4), Sector::Front);
    assert_eq!(sector_for_angle(-3.0 * std::f64::consts::FRAC_PI_4), Sector::Rear);
    assert_eq!(sector_for_angle(1.0), Sector::Side);
}

#[test]
fn ttc_examples() {
    let r = BBox::CAR.length.hypot(BBox::CAR.width) / 2.0;
    let sv = state(AgentType::Vehicle, 0.0, 0.0, 0.0, 10.0);
    let head_on = state(AgentType::Vehicle, 50.0, 0.0, std::f64::consts::PI, 10.0);
    assert!((pair_ttc(&sv, &head_on) - (50.0 - 2.0 * r) / 20.0).abs() < 1e-9);
    let lead = state(AgentType::Vehicle, 30.0, 0.0, 0.0, 6.0);
    assert!((pair_ttc(&sv, &lead) - (30.0 - 2.0 * r) / 4.0).abs() < 1e-9);
    let faster = state(AgentType::Vehicle, 30.0, 0.0, 0.0, 12.0);
    assert_eq!(pair_ttc(&sv, &faster), f64::INFINITY);
    // Crossing at right angles: closing speed is the projection onto the line of centers.
    let t = ttc_raw(Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), 0.0, Vec2::new(30.0, -40.0), Vec2::new(0.0, 10.0), 0.0);
    let closing = 10.0 * 0.6 + 10.0 * 0.8;
    assert!((t - 50.0 / closing).abs() < 1e-9);
    let touching = state(AgentType::Vehicle, 3.0, 0.0, std::f64::consts::PI, 1.0);
    assert_eq!(pair_ttc(&sv, &touching), 0.0);
}

#[test]
fn metrics_oracle() {
    let r = |collided, at_fault, ttc_min, progress| RunSummary { collided, at_fault, ttc_min, progress };
    let runs = [r(true, true, 0.0, 0.4), r(true, false, 0.5, 1.0), r(false, false, 3.0, 1.0), r(false, false, TTC_CAP, 0.9)];
    let m = aggregate(&runs).unwrap();
    assert_eq!(m.runs, 4);
    assert_eq!(m.cr, 50.0);
    assert_eq!(m.cr_fault, 25.0);
    assert!((m.mean_ttc_min.unwrap() - 3.5 / 3.0).abs() < 1e-12);
    assert_eq!(m.ttc_capped, 1);
    assert_eq!(m.e_highrisk, 50.0);
    assert!((m.pc - 82.5).abs() < 1e-12);
    assert!(aggregate(&[]).is_err());
    assert_eq!(aggregate(&[r(false, false, TTC_CAP, 1.0)]).unwrap().mean_ttc_min, None);
    let json: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
    assert_eq!(json["CR_fault"], 25.0);
    let table = forge_core::sim::MetricsReport::table(&[("original", &m)]);
    assert!(table.lines().nth(1).unwrap().starts_with("original"));
}

#[test]
fn completion_projects_onto_route() {
    let route = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)];
    let (pc, len) = path_completion(&route, Vec2::new(10.5, 5.0));
    assert!((pc - 0.75).abs() < 1e-12 && (len - 20.0).abs() < 1e-12);
    assert_eq!(path_completion(&route, Vec2::new(-5.0, 0.0)).0, 0.0);
    assert_eq!(path_completion(&[Vec2::new(1.0, 1.0); 3], Vec2::new(0.0, 0.0)), (1.0, 0.0));
}

proptest! {
    #[test]
    fn report_rates_are_consistent(runs in prop::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..12.0, -0.2f64..1.2), 1..40)) {
        let runs: Vec<RunSummary> = runs.into_iter().map(|(c, f, t, p)| RunSummary { collided: c, at_fault: c && f, ttc_min: t.min(TTC_CAP), progress: p }).collect();
        let m = aggregate(&runs).unwrap();
        prop_assert!(m.cr_fault <= m.cr);
        prop_assert!((0.0..=100.0).contains(&m.cr) && (0.0..=100.0).contains(&m.pc) && (0.0..=100.0).contains(&m.e_highrisk));
        if let Some(t) = m.mean_ttc_min {
            prop_assert!((0.0..TTC_CAP).contains(&t));
        }
        prop_assert_eq!(m.ttc_capped, runs.iter().filter(|r| r.ttc_min >= TTC_CAP).count());
    }
}
