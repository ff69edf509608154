mod common;

use common::*;
use forge_core::geometry::Vec2;
use forge_strategist::relative::{bearing_bin, Bin};
use forge_strategist::{describe_scenario, lookup_knowledge, scenario_brief, AdversarialBehavior, ConflictVehicle, SvBehavior, KNOWLEDGE_DB};

#[test]
fn knowledge_rows_per_behavior() {
    assert_eq!(KNOWLEDGE_DB.len(), 8);
    let counts: Vec<usize> = SvBehavior::ALL.iter().map(|b| lookup_knowledge(*b).len()).collect();
    assert_eq!(counts, [3, 1, 2, 2]);
    let rows: Vec<(SvBehavior, ConflictVehicle, AdversarialBehavior)> =
        KNOWLEDGE_DB.iter().map(|e| (e.sv_behavior, e.conflict_vehicle, e.adversarial_behavior)).collect();
    use AdversarialBehavior as A;
    use ConflictVehicle as C;
    use SvBehavior as B;
    assert_eq!(
        rows,
        [
            (B::GoingStraight, C::Adjacent, A::CutIn),
            (B::GoingStraight, C::Leading, A::EmergencyBraking),
            (B::GoingStraight, C::CrossTraffic, A::RedLightRunning),
            (B::Turning, C::Oncoming, A::TrajectoryConflict),
            (B::LaneChanging, C::Occluded, A::Collision),
            (B::LaneChanging, C::Adjacent, A::TrajectoryInterference),
            (B::RampMerging, C::MainRoad, A::RearEndCollision),
            (B::RampMerging, C::Ramp, A::ForcibleMerging),
        ]
    );
    assert!(KNOWLEDGE_DB.iter().all(|e| !e.description.is_empty()));
    let turning = lookup_knowledge(SvBehavior::Turning);
    assert_eq!(turning[0].conflict_vehicle, ConflictVehicle::Oncoming);
}

#[test]
fn agent_ahead_left_reads_front_left() {
    // 10 deg left of the SV heading at 15 m: x = 15 cos 10, y = 15 sin 10.
    let a = 10f64.to_radians();
    let p = Vec2::new(15.0 * a.cos(), 15.0 * a.sin());
    let s = scenario("desc", straight_map(), vec![sv_straight(), cv(8, p, 0.0, 10.0)]);
    let text = describe_scenario(&s);
    let block = text.split("[agent 8]").nth(1).expect("agent 8 block");
    let initial = block.lines().find(|l| l.starts_with("initial")).unwrap();
    assert!(initial.contains("front-left, ~15 m"), "{initial}");
}

#[test]
fn sector_edges() {
    // Centered 45 deg sectors; lateral well inside the lane keeps front/rear.
    let bin = |deg: f64| bearing_bin(deg.to_radians(), 0.0, 1.75);
    assert_eq!(bin(0.0), Bin::Front);
    assert_eq!(bin(22.0), Bin::Front);
    assert_eq!(bin(23.0), Bin::FrontLeft);
    assert_eq!(bin(90.0), Bin::Left);
    assert_eq!(bin(-90.0), Bin::Right);
    assert_eq!(bin(180.0), Bin::Rear);
    assert_eq!(bin(-135.0), Bin::RearRight);
}

#[test]
fn sv_only_has_no_agent_blocks() {
    let s = scenario("solo", straight_map(), vec![sv_straight()]);
    let text = describe_scenario(&s);
    assert!(text.contains("[SV] agent 0"));
    assert!(!text.contains("[agent "));
}

#[test]
fn description_mentions_every_agent_and_is_stable() {
    for (i, t) in forge_core::scenario::MapTemplate::ALL.iter().enumerate() {
        let s = forge_core::scenario::build_synthetic_scenario(*t, 6, 40 + i as u64).unwrap();
        let a = describe_scenario(&s);
        assert_eq!(a, describe_scenario(&s));
        for ag in &s.agents {
            if ag.id != s.sv_id {
                assert!(a.contains(&format!("[agent {}]", ag.id)), "agent {} missing", ag.id);
            }
        }
        let b1 = scenario_brief(&s, false).unwrap();
        assert_eq!(b1, scenario_brief(&s, false).unwrap());
    }
}
