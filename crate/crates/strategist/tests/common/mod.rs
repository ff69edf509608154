#![allow(dead_code)]

use forge_core::geometry::Vec2;
use forge_core::scenario::{AgentTrack, BBox, Lane, LaneMap};
use forge_core::{AgentId, AgentState, AgentType, Scenario};

pub const T_HIST: usize = 11;
pub const T_FUT: usize = 81;
pub const STEPS: usize = T_HIST + T_FUT;
pub const DT: f64 = 0.1;

/// State at step `t` from a path `(position, heading, speed)` over time in
/// seconds. The path's time zero is the scenario start step.
pub fn track(id: u32, kind: AgentType, path: impl Fn(f64) -> (Vec2, f64, f64)) -> AgentTrack {
    let states = (0..STEPS)
        .map(|t| {
            let (position, heading, speed) = path((t as f64 - (T_HIST - 1) as f64) * DT);
            AgentState { agent_type: kind, position, heading, velocity: Vec2::from_angle(heading) * speed, bbox: BBox::CAR }
        })
        .collect();
    AgentTrack { id: AgentId(id), states }
}

/// Constant velocity starting at `p0` at the start step.
pub fn cv(id: u32, p0: Vec2, heading: f64, speed: f64) -> AgentTrack {
    track(id, AgentType::Vehicle, move |t| (p0 + Vec2::from_angle(heading) * (speed * t), heading, speed))
}

pub fn parked(id: u32, p: Vec2, heading: f64) -> AgentTrack {
    track(id, AgentType::StaticObject, move |_| (p, heading, 0.0))
}

fn line(a: Vec2, b: Vec2) -> Vec<Vec2> {
    vec![a, b]
}

/// Three eastbound lanes centered at y = -3.5, 0, 3.5.
pub fn straight_map() -> LaneMap {
    let lanes = [-3.5, 0.0, 3.5]
        .iter()
        .map(|&y| Lane { centerline: line(Vec2::new(-200.0, y), Vec2::new(400.0, y)), speed_limit: 15.0, merge: false })
        .collect();
    LaneMap { lanes, crosswalks: vec![], lane_half_width: 1.75 }
}

/// One eastbound lane through the origin crossed by one northbound lane.
pub fn crossing_map() -> LaneMap {
    LaneMap {
        lanes: vec![
            Lane { centerline: line(Vec2::new(-150.0, 0.0), Vec2::new(150.0, 0.0)), speed_limit: 13.0, merge: false },
            Lane { centerline: line(Vec2::new(0.0, -150.0), Vec2::new(0.0, 150.0)), speed_limit: 13.0, merge: false },
        ],
        crosswalks: vec![],
        lane_half_width: 1.75,
    }
}

pub fn scenario(id: &str, map: LaneMap, agents: Vec<AgentTrack>) -> Scenario {
    let s = Scenario {
        id: id.to_string(),
        dt: DT,
        t_hist: T_HIST,
        t_fut: T_FUT,
        sv_id: AgentId(0),
        map,
        signals: vec![],
        agents,
    };
    s.validate().expect("test scenario is valid");
    s
}

/// SV driving east at 10 m/s in the middle lane from the origin.
pub fn sv_straight() -> AgentTrack {
    cv(0, Vec2::new(0.0, 0.0), 0.0, 10.0)
}
