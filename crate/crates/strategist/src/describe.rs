//! Plain-text scenario description for the strategist.

use std::fmt::Write as _;

use forge_core::scenario::SignalState;
use forge_core::{AgentState, AgentType, Scenario};

use crate::relative::relative;

pub(crate) fn type_name(t: AgentType) -> &'static str {
    match t {
        AgentType::Vehicle => "vehicle",
        AgentType::Pedestrian => "pedestrian",
        AgentType::StaticObject => "static object",
    }
}

fn pose(s: &AgentState) -> String {
    format!(
        "pos ({:.1}, {:.1}) m, heading {:.0} deg, speed {:.1} m/s",
        s.position.x,
        s.position.y,
        s.heading.to_degrees(),
        s.speed()
    )
}

/// The two steps a description and a render show: the present state and the
/// last logged one.
pub fn key_steps(scenario: &Scenario) -> (usize, usize) {
    (scenario.start_step(), scenario.horizon())
}

/// Map block, SV block, then one block per other agent in id order with
/// absolute pose and SV-relative position at the initial and final steps.
pub fn describe_scenario(scenario: &Scenario) -> String {
    let (t0, t1) = key_steps(scenario);
    let hw = scenario.map.lane_half_width;
    let mut out = String::new();
    let _ = writeln!(out, "scenario {}", scenario.id);
    let _ = writeln!(
        out,
        "time: dt {} s, initial step {t0} (t = {:.1} s), final step {t1} (t = {:.1} s)",
        scenario.dt,
        t0 as f64 * scenario.dt,
        t1 as f64 * scenario.dt
    );

    let _ = writeln!(out, "\n[map]");
    let merges = scenario.map.lanes.iter().filter(|l| l.merge).count();
    let _ = writeln!(
        out,
        "{} lanes ({} merge), lane width {:.1} m, {} crosswalks, {} signals",
        scenario.map.lanes.len(),
        merges,
        2.0 * hw,
        scenario.map.crosswalks.len(),
        scenario.signals.len()
    );
    for (i, lane) in scenario.map.lanes.iter().enumerate() {
        let pl = lane.polyline();
        let (a, b) = (pl.points()[0], *pl.points().last().unwrap());
        let _ = writeln!(
            out,
            "lane {i}: ({:.0}, {:.0}) -> ({:.0}, {:.0}), length {:.0} m, limit {:.1} m/s{}",
            a.x,
            a.y,
            b.x,
            b.y,
            pl.length(),
            lane.speed_limit,
            if lane.merge { ", merge lane" } else { "" }
        );
    }
    for (i, s) in scenario.signals.iter().enumerate() {
        let state = |t: usize| match s.state_at(t as f64 * scenario.dt) {
            SignalState::Red => "red",
            SignalState::Green => "green",
        };
        let _ = writeln!(
            out,
            "signal {i}: lane {} at ({:.1}, {:.1}), {} initially, {} finally",
            s.controlled_lane,
            s.position.x,
            s.position.y,
            state(t0),
            state(t1)
        );
    }

    let sv = scenario.sv();
    let _ = writeln!(out, "\n[SV] agent {} ({})", sv.id, type_name(sv.states[t0].agent_type));
    let _ = writeln!(out, "initial: {}", pose(&sv.states[t0]));
    let _ = writeln!(out, "final: {}", pose(&sv.states[t1]));
    let lane_of = |s: &AgentState| scenario.map.nearest_lane(s.position, s.heading).map(|(i, _)| i);
    if let (Some(a), Some(b)) = (lane_of(&sv.states[t0]), lane_of(&sv.states[t1])) {
        let _ = writeln!(out, "lane: {a} initially, {b} finally");
    }

    let mut others: Vec<_> = scenario.agents.iter().filter(|a| a.id != scenario.sv_id).collect();
    others.sort_by_key(|a| a.id);
    for a in others {
        let _ = writeln!(out, "\n[agent {}] {}", a.id, type_name(a.states[t0].agent_type));
        for (label, t) in [("initial", t0), ("final", t1)] {
            let r = relative(&sv.states[t], &a.states[t], hw);
            let _ = writeln!(
                out,
                "{label}: {}; {}, ~{:.0} m from SV",
                pose(&a.states[t]),
                r.bin,
                r.distance
            );
        }
    }
    out
}
