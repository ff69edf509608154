//! Fixed-length per-agent scene features and candidate goal points.
//!
//! Every feature is expressed in the agent's own frame (origin at its current
//! position, x-axis along its current heading), so features are invariant
//! under rigid motions of the whole scene.
//!
//! Layout of the 117 features:
//!
//! | range    | content                                                        |
//! |----------|----------------------------------------------------------------|
//! | 0..55    | 11 history steps x (x/20, y/20, cos dh, sin dh, speed/10)      |
//! | 55..63   | speed/10, accel/2, yaw rate/0.5, length/5, width/2, type (3)   |
//! | 63..80   | lane: lateral/1.75, heading error, limit/10, merge, mask, 6 lookahead points |
//! | 80..112  | 4 nearest neighbors x (x, y, cos, sin, vx, vy, static, mask)   |
//! | 112..116 | signal on own lane: distance/50, red, green, mask              |
//! | 116      | agent count/10                                                 |

use serde::{Deserialize, Serialize};

use crate::dynamics::KinematicState;
use crate::error::{Error, Result};
use crate::geometry::{wrap_diff, Polyline, Vec2};
use crate::scenario::{
    nearest_lane_in, AgentId, AgentState, AgentType, LaneMap, Scenario, SignalState,
    TrafficSignal, Window,
};

pub const HISTORY_STEPS: usize = 11;
pub const FEATURE_DIM: usize = 117;
pub const NEIGHBORS: usize = 4;
pub const NEIGHBOR_RADIUS: f64 = 60.0;
/// Lane counts as "near" within this distance of its centerline.
pub const LANE_SNAP: f64 = 5.0;
const LOOKAHEAD: [f64; 6] = [5.0, 10.0, 20.0, 40.0, 60.0, 80.0];
const POS_SCALE: f64 = 20.0;
const SPEED_SCALE: f64 = 10.0;

pub const GOAL_FACTORS: [f64; 4] = [0.5, 0.75, 1.0, 1.25];
const STATIONARY_DISTANCES: [f64; 4] = [0.0, 5.0, 10.0, 20.0];
const STATIONARY_SPEED: f64 = 0.5;
const ADJACENT_OFFSET: f64 = 3.5;

/// Candidate endpoints for one agent, with drivability labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateGoals {
    pub points: Vec<Vec2>,
    pub drivable: Vec<bool>,
}

impl CandidateGoals {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Encoder input for one agent plus what the sampler needs to roll out its
/// actions.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentContext {
    pub id: AgentId,
    pub features: Vec<f64>,
    pub state: KinematicState,
    pub goals: CandidateGoals,
}

impl AgentContext {
    /// Goal `q` in the agent frame, scaled like the position features.
    pub fn goal_feature(&self, q: usize) -> [f64; 2] {
        let g = self.goals.points[q].to_frame(self.state.position(), self.state.heading);
        [g.x / POS_SCALE, g.y / POS_SCALE]
    }
}

/// Candidate goals at `Q = 6`: four lane-following endpoints at multiples
/// of the distance covered at current speed over `horizon` seconds, and two
/// endpoints offset one lane to either side.
pub fn goals_for(state: &AgentState, map: &LaneMap, lines: &[Polyline], horizon: f64) -> CandidateGoals {
    let v = state.speed();
    let stationary = v < STATIONARY_SPEED;
    let dists: Vec<f64> = if stationary {
        STATIONARY_DISTANCES.to_vec()
    } else {
        GOAL_FACTORS.iter().map(|f| f * v * horizon).collect()
    };
    let mid = if stationary { 10.0 } else { v * horizon };
    let near = nearest_lane_in(lines, state.position, state.heading).filter(|(_, p)| p.distance <= LANE_SNAP);
    let mut points = Vec::with_capacity(6);
    match near {
        Some((i, proj)) => {
            let line = &lines[i];
            for &d in &dists {
                if stationary && d == 0.0 {
                    points.push(state.position);
                } else {
                    points.push(line.point_at(proj.s + d));
                }
            }
            let c = line.point_at(proj.s + mid);
            let n = Vec2::from_angle(line.heading_at(proj.s + mid)).perp();
            points.push(c + n * ADJACENT_OFFSET);
            points.push(c - n * ADJACENT_OFFSET);
            let drivable = points.iter().map(|&p| map.is_drivable(p)).collect();
            CandidateGoals { points, drivable }
        }
        None => {
            let u = Vec2::from_angle(state.heading);
            for &d in &dists {
                points.push(state.position + u * d);
            }
            let c = state.position + u * mid;
            points.push(c + u.perp() * ADJACENT_OFFSET);
            points.push(c - u.perp() * ADJACENT_OFFSET);
            CandidateGoals { drivable: vec![false; points.len()], points }
        }
    }
}

/// Candidate goals of `agent` at the scenario's start step.
pub fn candidate_goals(scenario: &Scenario, agent: AgentId) -> Result<CandidateGoals> {
    let track = scenario
        .track(agent)
        .ok_or_else(|| Error::Config(format!("agent {agent} not in scenario")))?;
    let state = &track.states[scenario.start_step()];
    let horizon = scenario.t_fut as f64 * scenario.dt;
    Ok(goals_for(state, &scenario.map, &scenario.map.polylines(), horizon))
}

fn push_frame(out: &mut Vec<f64>, p: Vec2, origin: Vec2, heading: f64) {
    let q = p.to_frame(origin, heading);
    out.push(q.x / POS_SCALE);
    out.push(q.y / POS_SCALE);
}

fn type_one_hot(t: AgentType) -> [f64; 3] {
    match t {
        AgentType::Vehicle => [1.0, 0.0, 0.0],
        AgentType::Pedestrian => [0.0, 1.0, 0.0],
        AgentType::StaticObject => [0.0, 0.0, 1.0],
    }
}

/// Encodes the agents in `targets` from a history window that ends at the
/// present step. `time` is the present time in seconds (for signal phases)
/// and `horizon` the prediction horizon in seconds (for candidate goals).
pub fn encode_context(
    history: &Window,
    map: &LaneMap,
    signals: &[TrafficSignal],
    time: f64,
    dt: f64,
    horizon: f64,
    targets: &[AgentId],
) -> Result<Vec<AgentContext>> {
    if map.lanes.is_empty() {
        return Err(Error::Config("scene context needs a map with at least one lane".into()));
    }
    if history.len() != HISTORY_STEPS {
        return Err(Error::Shape(format!(
            "history window has {} steps, encoder expects {HISTORY_STEPS}",
            history.len()
        )));
    }
    let lines = map.polylines();
    let current: Vec<(AgentId, &AgentState)> =
        history.tracks.iter().map(|t| (t.id, t.states.last().unwrap())).collect();
    let mut out = Vec::with_capacity(targets.len());
    for &id in targets {
        let track = history
            .tracks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Config(format!("agent {id} not in history window")))?;
        let me = track.states.last().unwrap();
        let (origin, h) = (me.position, me.heading);
        let mut f = Vec::with_capacity(FEATURE_DIM);

        for s in &track.states {
            push_frame(&mut f, s.position, origin, h);
            let dh = wrap_diff(s.heading, h);
            f.push(dh.cos());
            f.push(dh.sin());
            f.push(s.speed() / SPEED_SCALE);
        }

        let prev = &track.states[HISTORY_STEPS - 2];
        f.push(me.speed() / SPEED_SCALE);
        f.push((me.speed() - prev.speed()) / dt / 2.0);
        f.push(wrap_diff(me.heading, prev.heading) / dt / 0.5);
        f.push(me.bbox.length / 5.0);
        f.push(me.bbox.width / 2.0);
        f.extend(type_one_hot(me.agent_type));

        let near = nearest_lane_in(&lines, origin, h).filter(|(_, p)| p.distance <= LANE_SNAP);
        match near {
            Some((li, proj)) => {
                let lane = &map.lanes[li];
                f.push(proj.lateral / map.lane_half_width);
                f.push(wrap_diff(proj.heading, h));
                f.push(lane.speed_limit / SPEED_SCALE);
                f.push(if lane.merge { 1.0 } else { 0.0 });
                f.push(1.0);
                for d in LOOKAHEAD {
                    push_frame(&mut f, lines[li].point_at(proj.s + d), origin, h);
                }
            }
            None => f.extend([0.0; 17]),
        }

        let mut others: Vec<(f64, AgentId, &AgentState)> = current
            .iter()
            .filter(|(oid, _)| *oid != id)
            .map(|&(oid, s)| (s.position.distance(origin), oid, s))
            .filter(|(d, _, _)| *d <= NEIGHBOR_RADIUS)
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for slot in 0..NEIGHBORS {
            match others.get(slot) {
                Some(&(_, _, o)) => {
                    push_frame(&mut f, o.position, origin, h);
                    let dh = wrap_diff(o.heading, h);
                    f.push(dh.cos());
                    f.push(dh.sin());
                    let rv = (o.velocity - me.velocity).rotate(-h);
                    f.push(rv.x / SPEED_SCALE);
                    f.push(rv.y / SPEED_SCALE);
                    f.push(if o.agent_type == AgentType::StaticObject { 1.0 } else { 0.0 });
                    f.push(1.0);
                }
                None => f.extend([0.0; 8]),
            }
        }

        let mut best: Option<(f64, SignalState)> = None;
        if let Some((li, proj)) = near {
            for sig in signals.iter().filter(|s| s.controlled_lane == li) {
                let ds = lines[li].project(sig.position).s - proj.s;
                if ds >= -2.0 && best.map_or(true, |b| ds < b.0) {
                    best = Some((ds, sig.state_at(time)));
                }
            }
        }
        match best {
            Some((ds, st)) => {
                f.push(ds / 50.0);
                f.push(if st == SignalState::Red { 1.0 } else { 0.0 });
                f.push(if st == SignalState::Green { 1.0 } else { 0.0 });
                f.push(1.0);
            }
            None => f.extend([0.0; 4]),
        }

        f.push(history.tracks.len() as f64 / 10.0);
        debug_assert_eq!(f.len(), FEATURE_DIM);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite context feature for agent {id}")));
        }
        out.push(AgentContext {
            id,
            features: f,
            state: me.kinematic(),
            goals: goals_for(me, map, &lines, horizon),
        });
    }
    Ok(out)
}

/// Context for `targets` at the scenario's start step.
pub fn scenario_context(scenario: &Scenario, targets: &[AgentId]) -> Result<Vec<AgentContext>> {
    let (hist, _) = scenario.slice_history_future(scenario.start_step())?;
    encode_context(
        &hist,
        &scenario.map,
        &scenario.signals,
        scenario.start_step() as f64 * scenario.dt,
        scenario.dt,
        scenario.t_fut as f64 * scenario.dt,
        targets,
    )
}
