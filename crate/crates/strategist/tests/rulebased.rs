mod common;

use std::f64::consts::FRAC_PI_2;

use common::*;
use forge_core::geometry::Vec2;
use forge_core::guidance::{plan_to_string, validate_plan, PlanLimits, TemplateKind};
use forge_core::scenario::{build_synthetic_scenario, MapTemplate};
use forge_core::AgentId;
use forge_strategist::{propose_plan_rulebased, RuleConfig, StrategistError};
use proptest::prelude::*;

fn kinds(plan: &forge_core::guidance::GuidancePlan) -> Vec<TemplateKind> {
    plan.templates.iter().map(|t| t.kind).collect()
}

#[test]
fn stationary_cross_traffic_gets_speed_and_interact() {
    // SV eastbound 40 m before the junction; agent 5 waits on the crossing
    // road 10 m south of the center, facing north.
    let sv = cv(0, Vec2::new(-40.0, 0.0), 0.0, 10.0);
    let waiting = cv(5, Vec2::new(0.0, -10.0), FRAC_PI_2, 0.0);
    let far = cv(7, Vec2::new(0.0, -55.0), FRAC_PI_2, 0.0);
    let s = scenario("junction", crossing_map(), vec![sv, waiting, far]);
    let (plan, tr) = propose_plan_rulebased(&s, &RuleConfig::default()).unwrap();
    assert_eq!(plan.adversarial_ids, vec![AgentId(5)]);
    assert_eq!(kinds(&plan), [TemplateKind::Speed, TemplateKind::Interact, TemplateKind::Smooth]);
    let interact = &plan.templates[1];
    assert_eq!(interact.params.d_trigger, Some(30.0));
    assert_eq!(interact.time_domain, [30.0, 80.0]);
    assert_eq!(plan.templates[0].time_domain, [0.0, 30.0]);
    // Red-light running drives at the lane limit.
    assert_eq!(plan.templates[0].params.v_target, Some(13.0));
    assert_eq!(tr.provenance, "rule-based");
    assert_eq!(tr.stages.len(), 3);
    assert!(validate_plan(&plan, &s, &PlanLimits::default()).is_ok());
}

#[test]
fn adjacent_beats_leading_by_table_order() {
    let s = scenario(
        "order",
        straight_map(),
        vec![sv_straight(), cv(1, Vec2::new(20.0, 0.0), 0.0, 10.0), cv(2, Vec2::new(25.0, 3.5), 0.0, 10.0)],
    );
    let (plan, tr) = propose_plan_rulebased(&s, &RuleConfig::default()).unwrap();
    assert_eq!(plan.adversarial_ids, vec![AgentId(2)]);
    assert_eq!(kinds(&plan), [TemplateKind::Speed, TemplateKind::Goal, TemplateKind::Interact, TemplateKind::Smooth]);
    let risk = tr.stages[1].parsed.as_ref().unwrap();
    assert_eq!(risk["entry"]["adversarial_behavior"], "cut_in");
    assert_eq!(risk["entry"]["conflict_vehicle"], "adjacent");
}

#[test]
fn nearest_then_lowest_id() {
    // Two leading cars at equal distance are impossible in one lane, so use
    // adjacent cars mirrored left and right.
    let s = scenario(
        "tie",
        straight_map(),
        vec![sv_straight(), cv(4, Vec2::new(15.0, -3.5), 0.0, 10.0), cv(3, Vec2::new(15.0, 3.5), 0.0, 10.0), cv(2, Vec2::new(30.0, 3.5), 0.0, 10.0)],
    );
    let (plan, _) = propose_plan_rulebased(&s, &RuleConfig::default()).unwrap();
    assert_eq!(plan.adversarial_ids, vec![AgentId(3)]);
}

#[test]
fn parked_and_far_agents_never_match() {
    let s = scenario(
        "parked",
        straight_map(),
        vec![sv_straight(), parked(1, Vec2::new(15.0, 0.0), 0.0), cv(2, Vec2::new(90.0, 0.0), 0.0, 10.0)],
    );
    assert!(matches!(propose_plan_rulebased(&s, &RuleConfig::default()), Err(StrategistError::NoPlan(_))));
}

#[test]
fn sv_only_is_no_plan() {
    let s = scenario("solo", straight_map(), vec![sv_straight()]);
    match propose_plan_rulebased(&s, &RuleConfig::default()) {
        Err(StrategistError::NoPlan(reason)) => assert!(reason.contains("going_straight"), "{reason}"),
        other => panic!("expected no-plan, got {other:?}"),
    }
}

#[test]
fn occluded_car_behind_a_blocker() {
    // SV moves one lane left; agent 2 trails in the target lane, hidden
    // behind agent 1 which sits between them.
    let sv = track(0, forge_core::AgentType::Vehicle, |t| {
        let u = (t / 4.0).clamp(0.0, 1.0);
        (Vec2::new(10.0 * t, 3.5 * (1.0 - (std::f64::consts::PI * u).cos()) / 2.0), 0.0, 10.0)
    });
    let blocker = cv(1, Vec2::new(-8.0, 2.0), 0.0, 10.0);
    let hidden = cv(2, Vec2::new(-25.0, 3.5), 0.0, 12.0);
    let s = scenario("occl", straight_map(), vec![sv, blocker, hidden]);
    let (plan, tr) = propose_plan_rulebased(&s, &RuleConfig::default()).unwrap();
    assert_eq!(plan.adversarial_ids, vec![AgentId(2)]);
    assert_eq!(tr.stages[1].parsed.as_ref().unwrap()["entry"]["conflict_vehicle"], "occluded");
}

#[test]
fn deterministic() {
    let (s, a) = (0..50)
        .find_map(|seed| {
            let s = build_synthetic_scenario(MapTemplate::StraightRoad, 8, seed).unwrap();
            propose_plan_rulebased(&s, &RuleConfig::default()).ok().map(|p| (s, p))
        })
        .expect("some straight-road scenario has a plan");
    let b = propose_plan_rulebased(&s, &RuleConfig::default()).unwrap();
    assert_eq!(plan_to_string(&a.0), plan_to_string(&b.0));
    assert_eq!(a.1.to_json(), b.1.to_json());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]
    #[test]
    fn plans_always_validate(t in 0usize..5, n in 1usize..10, seed in 0u64..10_000) {
        let s = build_synthetic_scenario(MapTemplate::ALL[t], n, seed).unwrap();
        match propose_plan_rulebased(&s, &RuleConfig::default()) {
            Ok((plan, tr)) => {
                prop_assert!(validate_plan(&plan, &s, &PlanLimits::default()).is_ok());
                prop_assert_eq!(tr.plan.as_ref(), Some(&plan));
            }
            Err(StrategistError::NoPlan(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}
