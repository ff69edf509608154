//! Built-in algorithms under test and the intelligent-driver lane follower
//! that also drives the synthetic traffic generator.

use serde::{Deserialize, Serialize};

use crate::dynamics::KinematicState;
use crate::geometry::{wrap_diff, Polyline, Vec2};
use crate::scenario::{
    Action, ActionLimits, AgentId, AgentState, AgentTrack, AgentType, LaneMap, SignalState,
    TrafficSignal,
};

use super::metrics::pair_ttc;

/// A path to follow with its speed limit and vertex curvatures.
#[derive(Clone, Debug)]
pub struct Route {
    pub line: Polyline,
    pub speed_limit: f64,
    curvature: Vec<(f64, f64)>,
}

impl Route {
    pub fn new(line: Polyline, speed_limit: f64) -> Self {
        let pts = line.points();
        let mut curvature = Vec::new();
        let mut s = 0.0;
        for i in 1..pts.len().saturating_sub(1) {
            let a = pts[i] - pts[i - 1];
            let b = pts[i + 1] - pts[i];
            s += a.norm();
            let turn = wrap_diff(b.angle(), a.angle()).abs();
            let span = 0.5 * (a.norm() + b.norm());
            if turn > 1e-9 {
                curvature.push((s, turn / span));
            }
        }
        Self {
            line,
            speed_limit,
            curvature,
        }
    }

    /// Route along logged positions, extended 200 m past the last logged
    /// point along the final heading.
    pub fn from_track(track: &AgentTrack, speed_limit: f64) -> Self {
        let mut pts: Vec<Vec2> = Vec::new();
        for s in &track.states {
            if pts.last().map_or(true, |p| p.distance(s.position) > 0.5) {
                pts.push(s.position);
            }
        }
        let last = track.states.last().expect("non-empty track");
        if pts.len() < 2 {
            pts = vec![last.position];
        }
        let dir = if pts.len() >= 2 {
            (pts[pts.len() - 1] - pts[pts.len() - 2]).normalized()
        } else {
            Vec2::from_angle(last.heading)
        };
        let end = *pts.last().unwrap();
        pts.push(end + dir * 200.0);
        let line = Polyline::new(&pts).expect("extended route has two distinct points");
        Route::new(line, speed_limit)
    }

    /// Highest speed from which the curves within `horizon` meters ahead of
    /// `s` can be taken with lateral acceleration `a_lat` while braking at `b`.
    pub fn curve_speed_limit(&self, s: f64, horizon: f64, a_lat: f64, b: f64) -> f64 {
        let mut v = f64::INFINITY;
        for &(sv, k) in &self.curvature {
            if sv < s - 1.0 || sv > s + horizon {
                continue;
            }
            let d = (sv - s).max(0.0);
            let vc2 = a_lat / k;
            v = v.min((vc2 + 2.0 * b * d).sqrt());
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Desired speed; `None` uses the route speed limit.
    pub v0: Option<f64>,
    pub a_max: f64,
    pub b_comf: f64,
    pub s0: f64,
    pub time_headway: f64,
    pub delta: f64,
    /// Lateral acceleration budget for curve speed planning.
    pub a_lat: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: None,
            a_max: 1.5,
            b_comf: 2.0,
            s0: 2.0,
            time_headway: 1.5,
            delta: 4.0,
            a_lat: 2.5,
        }
    }
}

/// Bumper-to-bumper gap and speed of the vehicle ahead along the route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

/// Intelligent-driver longitudinal acceleration.
pub fn idm_accel(v: f64, v0: f64, leader: Option<Leader>, p: &IdmParams) -> f64 {
    let free = if v0 <= 0.0 {
        if v > 0.0 {
            -p.b_comf
        } else {
            0.0
        }
    } else {
        p.a_max * (1.0 - (v / v0).powf(p.delta))
    };
    match leader {
        None => free,
        Some(l) => {
            let dv = v - l.speed;
            let dynamic = v * p.time_headway + v * dv / (2.0 * (p.a_max * p.b_comf).sqrt());
            let s_star = p.s0 + dynamic.max(0.0);
            let gap = l.gap.max(0.1);
            free - p.a_max * (s_star / gap).powi(2)
        }
    }
}

/// Pure-pursuit yaw rate toward the route point `lookahead` meters ahead of
/// the vehicle's projection.
pub fn pure_pursuit(state: &KinematicState, route: &Route, s: f64) -> f64 {
    let lookahead = (0.8 * state.speed + 3.0).clamp(4.0, 20.0);
    let target = route.line.point_at(s + lookahead);
    let to = target - state.position();
    let dist = to.norm();
    if dist < 1e-6 {
        return 0.0;
    }
    let alpha = wrap_diff(to.angle(), state.heading);
    state.speed * 2.0 * alpha.sin() / dist
}

/// One lane-following control: IDM acceleration and pure-pursuit yaw rate,
/// clamped to `limits`.
pub fn idm_plan(
    state: &KinematicState,
    route: &Route,
    leader: Option<Leader>,
    params: &IdmParams,
    limits: &ActionLimits,
) -> Action {
    let s = route.line.project(state.position()).s;
    let mut v0 = params.v0.unwrap_or(route.speed_limit);
    let preview = state.speed * state.speed / (2.0 * params.b_comf) + 15.0;
    v0 = v0.min(route.curve_speed_limit(s, preview, params.a_lat, params.b_comf));
    let accel = idm_accel(state.speed, v0, leader, params);
    let yaw = pure_pursuit(state, route, s);
    limits.clamp(Action::new(accel, yaw))
}

/// Nearest obstacle ahead within the ego's corridor along `route`: other
/// agents whose footprint reaches the corridor and red signals on the path.
pub fn find_leader<'a>(
    route: &Route,
    ego: &AgentState,
    others: impl IntoIterator<Item = &'a AgentState>,
    red_stops: &[(Vec2, f64)],
) -> Option<Leader> {
    let ego_s = route.line.project(ego.position).s;
    let half_len = 0.5 * ego.bbox.length;
    let mut best: Option<Leader> = None;
    let mut offer = |gap: f64, speed: f64| {
        if best.map_or(true, |b| gap < b.gap) {
            best = Some(Leader { gap, speed });
        }
    };
    for o in others {
        let p = route.line.project(o.position);
        let ds = p.s - ego_s;
        if ds <= 0.0 || ds > 120.0 {
            continue;
        }
        let along = Vec2::from_angle(p.heading);
        let rel_heading = wrap_diff(o.heading, p.heading);
        let half_w_other =
            0.5 * (o.bbox.width * rel_heading.cos().abs() + o.bbox.length * rel_heading.sin().abs());
        if p.lateral.abs() > 0.5 * ego.bbox.width + half_w_other + 0.3 {
            continue;
        }
        let half_l_other =
            0.5 * (o.bbox.length * rel_heading.cos().abs() + o.bbox.width * rel_heading.sin().abs());
        offer(ds - half_len - half_l_other, o.velocity.dot(along));
    }
    for &(pos, heading) in red_stops {
        let p = route.line.project(pos);
        if p.lateral.abs() > 1.0 || wrap_diff(heading, p.heading).cos() < 0.7 {
            continue;
        }
        let gap = p.s - ego_s - half_len;
        if gap > 0.0 && gap < 120.0 {
            offer(gap, 0.0);
        }
    }
    best
}

/// Stop-line positions and lane headings of signals that are red at `time`.
pub fn red_stops(map: &LaneMap, signals: &[TrafficSignal], time: f64) -> Vec<(Vec2, f64)> {
    signals
        .iter()
        .filter(|s| s.state_at(time) == SignalState::Red)
        .filter_map(|s| {
            let lane = map.lanes.get(s.controlled_lane)?;
            let pl = lane.polyline();
            let h = pl.project(s.position).heading;
            Some((s.position, h))
        })
        .collect()
}

/// What a planner sees each step.
pub struct Observation<'a> {
    pub t_sim: usize,
    pub time: f64,
    pub dt: f64,
    pub sv: &'a AgentState,
    pub others: &'a [(AgentId, AgentState)],
    pub map: &'a LaneMap,
    pub signals: &'a [TrafficSignal],
}

/// Planner output: an action to integrate, or a state to place the SV at
/// directly (log replay).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Control {
    Act(Action),
    Place(AgentState),
}

pub trait Planner: Send {
    fn name(&self) -> &str;
    fn control(&mut self, obs: &Observation<'_>) -> Control;
}

/// Replays the logged SV trajectory exactly.
pub struct LogReplay {
    states: Vec<AgentState>,
    start: usize,
}

impl LogReplay {
    pub fn new(track: &AgentTrack, start_step: usize) -> Self {
        Self {
            states: track.states.clone(),
            start: start_step,
        }
    }
}

impl Planner for LogReplay {
    fn name(&self) -> &str {
        "log-replay"
    }

    fn control(&mut self, obs: &Observation<'_>) -> Control {
        let i = (self.start + obs.t_sim + 1).min(self.states.len() - 1);
        Control::Place(self.states[i])
    }
}

pub struct ConstantVelocity;

impl Planner for ConstantVelocity {
    fn name(&self) -> &str {
        "constant-velocity"
    }

    fn control(&mut self, _obs: &Observation<'_>) -> Control {
        Control::Act(Action::ZERO)
    }
}

/// IDM car following with pure-pursuit steering along a fixed route.
pub struct LaneFollower {
    pub route: Route,
    pub params: IdmParams,
    pub limits: ActionLimits,
}

impl LaneFollower {
    pub fn new(route: Route, params: IdmParams, limits: ActionLimits) -> Self {
        Self {
            route,
            params,
            limits,
        }
    }

    pub fn act(
        &self,
        ego: &AgentState,
        others: &[&AgentState],
        red: &[(Vec2, f64)],
    ) -> Action {
        let leader = find_leader(&self.route, ego, others.iter().copied(), red);
        idm_plan(&ego.kinematic(), &self.route, leader, &self.params, &self.limits)
    }
}

impl Planner for LaneFollower {
    fn name(&self) -> &str {
        "idm"
    }

    fn control(&mut self, obs: &Observation<'_>) -> Control {
        let red = red_stops(obs.map, obs.signals, obs.time);
        let others: Vec<&AgentState> = obs.others.iter().map(|(_, s)| s).collect();
        Control::Act(self.act(obs.sv, &others, &red))
    }
}

/// IDM lane follower that brakes hard whenever the constant-velocity TTC to
/// any agent drops below `ttc_threshold`.
pub struct Cautious {
    pub follower: LaneFollower,
    pub ttc_threshold: f64,
    pub brake: f64,
}

impl Planner for Cautious {
    fn name(&self) -> &str {
        "cautious"
    }

    fn control(&mut self, obs: &Observation<'_>) -> Control {
        let Control::Act(mut a) = self.follower.control(obs) else {
            unreachable!("lane follower always acts")
        };
        let threat = obs
            .others
            .iter()
            .filter(|(_, o)| o.agent_type != AgentType::StaticObject || o.speed() > 0.0)
            .map(|(_, o)| pair_ttc(obs.sv, o))
            .fold(f64::INFINITY, f64::min);
        if threat < self.ttc_threshold {
            a.accel = a.accel.min(-self.brake);
        }
        Control::Act(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_road_start_and_equilibrium() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(0.0, 10.0, None, &p), p.a_max);
        assert_eq!(idm_accel(10.0, 10.0, None, &p), 0.0);
    }

    #[test]
    fn leader_term_hand_evaluated() {
        // v = 8, v0 = 10, leader at 20 m moving at 6 m/s.
        let p = IdmParams::default();
        let a = idm_accel(8.0, 10.0, Some(Leader { gap: 20.0, speed: 6.0 }), &p);
        let s_star = 2.0 + 8.0 * 1.5 + 8.0 * 2.0 / (2.0 * (1.5f64 * 2.0).sqrt());
        let expected = 1.5 * (1.0 - 0.8f64.powi(4) - (s_star / 20.0).powi(2));
        assert!((a - expected).abs() < 1e-9);
        // at the desired gap with matched speeds only the free term is offset by a_max
        let v = 5.0;
        let s_eq = p.s0 + v * p.time_headway;
        let a = idm_accel(v, 10.0, Some(Leader { gap: s_eq, speed: v }), &p);
        assert!((a - (p.a_max * (1.0 - 0.5f64.powi(4)) - p.a_max)).abs() < 1e-9);
    }

    #[test]
    fn pursuit_holds_straight_line() {
        let route = Route::new(Polyline::new(&[Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)]).unwrap(), 10.0);
        let s = KinematicState::new(10.0, 0.0, 0.0, 10.0);
        assert_eq!(pure_pursuit(&s, &route, 10.0), 0.0);
        let off = KinematicState::new(10.0, 1.0, 0.0, 10.0);
        assert!(pure_pursuit(&off, &route, 10.0) < 0.0);
    }

    #[test]
    fn curve_limit_slows_before_bend() {
        let pts: Vec<Vec2> = (0..=20)
            .map(|i| {
                let a = i as f64 * std::f64::consts::FRAC_PI_2 / 20.0;
                Vec2::new(10.0 * a.sin(), 10.0 * (1.0 - a.cos()))
            })
            .collect();
        let mut all = vec![Vec2::new(-50.0, 0.0)];
        all.extend(pts);
        let route = Route::new(Polyline::new(&all).unwrap(), 15.0);
        let v = route.curve_speed_limit(45.0, 100.0, 2.5, 2.0);
        assert!(v < 10.0 && v >= 5.0, "{v}");
        assert!(route.curve_speed_limit(0.0, 10.0, 2.5, 2.0).is_infinite());
    }
}
