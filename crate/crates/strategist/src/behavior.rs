//! Rule cascade over the SV's logged route.

use forge_core::geometry::wrap_diff;
use forge_core::Scenario;
use serde::{Deserialize, Serialize};

use crate::knowledge::SvBehavior;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorThresholds {
    /// Net heading change below this counts as straight, degrees.
    pub straight_deg: f64,
    /// Net heading change at or above this is a turn, degrees.
    pub turn_deg: f64,
    /// Lateral offset from the initial lane, meters, that marks a lane change.
    pub lane_offset: f64,
    /// Route length below this is treated as stationary, meters.
    pub min_travel: f64,
}

impl Default for BehaviorThresholds {
    fn default() -> Self {
        Self { straight_deg: 15.0, turn_deg: 60.0, lane_offset: 1.5, min_travel: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Low,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BehaviorClass {
    pub behavior: SvBehavior,
    pub confidence: Confidence,
    /// Final minus initial heading, degrees.
    pub net_heading_deg: f64,
    /// Signed lateral offset of the final position from the initial lane.
    pub lane_offset: f64,
    pub on_merge_lane: bool,
    /// Left (+1), right (-1) or none, inferred from the lane offset.
    pub side: i8,
}

/// Classifies the SV route from the start step to the end of the log.
///
/// Order: stationary, turn, ramp, lane change, straight. Routes that bend
/// between the straight and turn thresholds without changing lane fall back
/// to going straight with low confidence.
pub fn classify_sv_behavior(scenario: &Scenario, th: &BehaviorThresholds) -> BehaviorClass {
    let states = &scenario.sv().states[scenario.start_step()..];
    let (first, last) = (states[0], *states.last().unwrap());
    let net = wrap_diff(last.heading, first.heading).to_degrees();
    let lanes = scenario.map.polylines();
    let start_lane = scenario.map.nearest_lane(first.position, first.heading).map(|(i, _)| i);
    let lane_offset = start_lane.map_or(0.0, |i| {
        let p = lanes[i].project(last.position);
        p.lateral - lanes[i].project(first.position).lateral
    });
    let on_merge_lane = states.iter().step_by(5).any(|s| {
        scenario.map.nearest_lane(s.position, s.heading).is_some_and(|(i, p)| {
            scenario.map.lanes[i].merge && p.distance <= scenario.map.lane_half_width
        })
    });
    let travel: f64 = states.windows(2).map(|w| w[0].position.distance(w[1].position)).sum();
    let side = if lane_offset >= th.lane_offset {
        1
    } else if lane_offset <= -th.lane_offset {
        -1
    } else {
        0
    };
    let class = |behavior, confidence| BehaviorClass {
        behavior,
        confidence,
        net_heading_deg: net,
        lane_offset,
        on_merge_lane,
        side,
    };
    if travel < th.min_travel {
        return class(SvBehavior::GoingStraight, Confidence::Low);
    }
    if net.abs() >= th.turn_deg {
        return class(SvBehavior::Turning, Confidence::High);
    }
    if on_merge_lane {
        return class(SvBehavior::RampMerging, Confidence::High);
    }
    if side != 0 && net.abs() < th.straight_deg {
        return class(SvBehavior::LaneChanging, Confidence::High);
    }
    let confident = net.abs() < th.straight_deg && side == 0;
    class(SvBehavior::GoingStraight, if confident { Confidence::High } else { Confidence::Low })
}
