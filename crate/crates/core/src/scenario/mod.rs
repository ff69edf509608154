//! Scenario domain types, windowing and the on-disk scenario document.

mod io;
mod maps;
mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::KinematicState;
use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, wrap_angle, Obb, Polyline, Projection, Vec2};

pub use io::{load_scenario, parse_scenario, save_scenario, scenario_to_string};
pub use maps::template_map;
pub use synth::{build_synthetic_scenario, MapTemplate};

/// Default simulation step in seconds.
pub const DEFAULT_DT: f64 = 0.1;
/// Default number of history states.
pub const DEFAULT_T_HIST: usize = 11;
/// Default number of future states.
pub const DEFAULT_T_FUT: usize = 81;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    StaticObject,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub length: f64,
    pub width: f64,
}

impl BBox {
    pub const CAR: BBox = BBox {
        length: 4.6,
        width: 1.9,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_type: AgentType,
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
    pub bbox: BBox,
}

impl AgentState {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn kinematic(&self) -> KinematicState {
        KinematicState {
            x: self.position.x,
            y: self.position.y,
            heading: self.heading,
            speed: self.speed(),
        }
    }

    /// Same agent moved to kinematic state `k`; velocity points along the heading.
    pub fn with_kinematic(&self, k: &KinematicState) -> AgentState {
        AgentState {
            position: Vec2::new(k.x, k.y),
            heading: k.heading,
            velocity: Vec2::from_angle(k.heading) * k.speed,
            ..*self
        }
    }

    pub fn obb(&self) -> Obb {
        Obb {
            center: self.position,
            heading: self.heading,
            length: self.bbox.length,
            width: self.bbox.width,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !(self.bbox.length > 0.0 && self.bbox.width > 0.0) {
            return Err("bbox dimensions must be positive".into());
        }
        if !(self.position.is_finite() && self.velocity.is_finite() && self.heading.is_finite()) {
            return Err("non-finite coordinates".into());
        }
        if !(self.heading > -std::f64::consts::PI && self.heading <= std::f64::consts::PI) {
            return Err(format!("heading {} outside (-pi, pi]", self.heading));
        }
        Ok(())
    }
}

/// Per-step control: longitudinal acceleration and yaw rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub accel: f64,
    pub yaw_rate: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        accel: 0.0,
        yaw_rate: 0.0,
    };

    pub fn new(accel: f64, yaw_rate: f64) -> Self {
        Self { accel, yaw_rate }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionLimits {
    pub accel: f64,
    pub yaw_rate: f64,
}

impl Default for ActionLimits {
    fn default() -> Self {
        Self {
            accel: 8.0,
            yaw_rate: 1.5,
        }
    }
}

impl ActionLimits {
    pub fn clamp(&self, a: Action) -> Action {
        Action {
            accel: a.accel.clamp(-self.accel, self.accel),
            yaw_rate: a.yaw_rate.clamp(-self.yaw_rate, self.yaw_rate),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub centerline: Vec<Vec2>,
    pub speed_limit: f64,
    /// Lane is an on-ramp that merges into the main road.
    #[serde(default)]
    pub merge: bool,
}

impl Lane {
    pub fn polyline(&self) -> Polyline {
        Polyline::new(&self.centerline).expect("lane centerline validated on construction")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneMap {
    pub lanes: Vec<Lane>,
    #[serde(default)]
    pub crosswalks: Vec<Vec<Vec2>>,
    pub lane_half_width: f64,
}

impl LaneMap {
    pub fn polylines(&self) -> Vec<Polyline> {
        self.lanes.iter().map(Lane::polyline).collect()
    }

    /// Nearest lane to `p`, preferring lanes aligned with `heading`. Returns
    /// the lane index and the projection.
    pub fn nearest_lane(&self, p: Vec2, heading: f64) -> Option<(usize, Projection)> {
        nearest_lane_in(&self.polylines(), p, heading)
    }

    /// Point lies within `lane_half_width` of some lane centerline.
    pub fn is_drivable(&self, p: Vec2) -> bool {
        self.lanes
            .iter()
            .any(|l| l.polyline().project(p).distance <= self.lane_half_width)
    }

    pub fn in_crosswalk(&self, p: Vec2) -> bool {
        self.crosswalks.iter().any(|c| point_in_polygon(p, c))
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !(self.lane_half_width > 0.0) {
            return Err("lane_half_width must be positive".into());
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.centerline.len() < 2 {
                return Err(format!("map.lanes[{i}]: centerline needs at least 2 points"));
            }
            if lane
                .centerline
                .windows(2)
                .any(|w| w[0].distance(w[1]) <= 1e-9)
            {
                return Err(format!("map.lanes[{i}]: consecutive centerline points coincide"));
            }
        }
        Ok(())
    }
}

/// Scores closer than this count as tied; the lower lane index wins. Turn
/// lanes share their approach segment with the through lane.
const LANE_TIE: f64 = 1e-9;

/// Nearest lane among precomputed polylines, with a heading-alignment penalty.
pub fn nearest_lane_in(lines: &[Polyline], p: Vec2, heading: f64) -> Option<(usize, Projection)> {
    let mut best: Option<(usize, Projection, f64)> = None;
    for (i, pl) in lines.iter().enumerate() {
        let proj = pl.project(p);
        let misalign = 1.0 - (proj.heading - heading).cos();
        let score = proj.distance + 4.0 * misalign;
        if best.as_ref().map_or(true, |b| score < b.2 - LANE_TIE) {
            best = Some((i, proj, score));
        }
    }
    best.map(|(i, p, _)| (i, p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Red,
    Green,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPhase {
    pub state: SignalState,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficSignal {
    pub position: Vec2,
    pub controlled_lane: usize,
    pub phases: Vec<SignalPhase>,
}

impl TrafficSignal {
    /// Signal state at `time` seconds; the phase schedule repeats cyclically.
    pub fn state_at(&self, time: f64) -> SignalState {
        let cycle: f64 = self.phases.iter().map(|p| p.duration).sum();
        let mut t = time.rem_euclid(cycle);
        for p in &self.phases {
            if t < p.duration {
                return p.state;
            }
            t -= p.duration;
        }
        self.phases.last().map_or(SignalState::Green, |p| p.state)
    }
}

/// All logged states of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: AgentId,
    pub states: Vec<AgentState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub dt: f64,
    #[serde(default = "default_t_hist")]
    pub t_hist: usize,
    #[serde(default = "default_t_fut")]
    pub t_fut: usize,
    pub sv_id: AgentId,
    pub map: LaneMap,
    pub signals: Vec<TrafficSignal>,
    pub agents: Vec<AgentTrack>,
}

fn default_t_hist() -> usize {
    DEFAULT_T_HIST
}

fn default_t_fut() -> usize {
    DEFAULT_T_FUT
}

/// A contiguous run of steps for every agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// Scenario step of the first state in each track.
    pub first_step: usize,
    pub tracks: Vec<AgentTrack>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.tracks.first().map_or(0, |t| t.states.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Scenario {
    /// Index of the last step, `T`; tracks hold `T + 1` states.
    pub fn horizon(&self) -> usize {
        self.agents.first().map_or(0, |a| a.states.len().saturating_sub(1))
    }

    /// Step of the present state when the scenario starts: the last history step.
    pub fn start_step(&self) -> usize {
        self.t_hist - 1
    }

    pub fn agent_index(&self, id: AgentId) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    pub fn track(&self, id: AgentId) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn sv(&self) -> &AgentTrack {
        self.track(self.sv_id).expect("sv_id validated")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Parse(m));
        if !(self.dt > 0.0) {
            return fail("dt must be positive".into());
        }
        if self.t_hist == 0 {
            return fail("t_hist must be at least 1".into());
        }
        if self.agents.is_empty() {
            return fail("agents: at least one agent required".into());
        }
        if self.track(self.sv_id).is_none() {
            return fail(format!("sv_id: agent {} not present", self.sv_id));
        }
        let len = self.agents[0].states.len();
        for (i, a) in self.agents.iter().enumerate() {
            if a.states.len() != len {
                return fail(format!(
                    "agents[{i}].states: length {} differs from {len}",
                    a.states.len()
                ));
            }
            for (t, s) in a.states.iter().enumerate() {
                s.check()
                    .or_else(|m| fail(format!("agents[{i}].states[{t}]: {m}")))?;
            }
            if self.agents[..i].iter().any(|b| b.id == a.id) {
                return fail(format!("agents[{i}].id: duplicate id {}", a.id));
            }
        }
        if self.t_hist + self.t_fut > len {
            return fail(format!(
                "t_hist + t_fut = {} exceeds sequence length {len}",
                self.t_hist + self.t_fut
            ));
        }
        self.map.check().or_else(|m| fail(format!("map: {m}")))?;
        for (i, s) in self.signals.iter().enumerate() {
            if s.phases.is_empty() || s.phases.iter().any(|p| !(p.duration > 0.0)) {
                return fail(format!("signals[{i}].phases: durations must be positive"));
            }
            if s.controlled_lane >= self.map.lanes.len() {
                return fail(format!("signals[{i}].controlled_lane: no such lane"));
            }
        }
        Ok(())
    }

    /// Splits at present step `t0`: the history holds `t_hist` states ending
    /// at `t0`, the future `t_fut` states starting at `t0 + 1`.
    pub fn slice_history_future(&self, t0: usize) -> Result<(Window, Window)> {
        let horizon = self.horizon();
        if t0 + 1 < self.t_hist || t0 + self.t_fut > horizon {
            return Err(Error::Bounds(format!(
                "t0 = {t0} outside [{}, {}]",
                self.t_hist as i64 - 1,
                horizon as i64 - self.t_fut as i64
            )));
        }
        let h0 = t0 + 1 - self.t_hist;
        let slice = |from: usize, to: usize| Window {
            first_step: from,
            tracks: self
                .agents
                .iter()
                .map(|a| AgentTrack {
                    id: a.id,
                    states: a.states[from..to].to_vec(),
                })
                .collect(),
        };
        Ok((slice(h0, t0 + 1), slice(t0 + 1, t0 + 1 + self.t_fut)))
    }

    /// Normalizes every heading into `(-pi, pi]`, returning one message per
    /// changed value.
    pub fn normalize_headings(&mut self) -> Vec<String> {
        let mut notes = Vec::new();
        for (i, a) in self.agents.iter_mut().enumerate() {
            for (t, s) in a.states.iter_mut().enumerate() {
                let h = wrap_angle(s.heading);
                if h != s.heading && s.heading.is_finite() {
                    notes.push(format!(
                        "agents[{i}].states[{t}].heading {} normalized to {h}",
                        s.heading
                    ));
                    s.heading = h;
                }
            }
        }
        notes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(len: usize) -> Scenario {
        let st = AgentState {
            agent_type: AgentType::Vehicle,
            position: Vec2::ZERO,
            heading: 0.0,
            velocity: Vec2::ZERO,
            bbox: BBox::CAR,
        };
        Scenario {
            id: "toy".into(),
            dt: 0.1,
            t_hist: 11,
            t_fut: 81,
            sv_id: AgentId(0),
            map: LaneMap {
                lanes: vec![Lane {
                    centerline: vec![Vec2::ZERO, Vec2::new(100.0, 0.0)],
                    speed_limit: 10.0,
                    merge: false,
                }],
                crosswalks: vec![],
                lane_half_width: 1.75,
            },
            signals: vec![],
            agents: vec![AgentTrack {
                id: AgentId(0),
                states: (0..len)
                    .map(|t| AgentState {
                        position: Vec2::new(t as f64, 0.0),
                        ..st
                    })
                    .collect(),
            }],
        }
    }

    #[test]
    fn slice_at_default_shapes() {
        let s = toy(92);
        assert_eq!(s.horizon(), 91);
        let (h, f) = s.slice_history_future(10).unwrap();
        assert_eq!(h.first_step, 0);
        assert_eq!(h.len(), 11);
        assert_eq!(h.tracks[0].states[10].position.x, 10.0);
        assert_eq!(f.first_step, 11);
        assert_eq!(f.len(), 81);
        assert_eq!(f.tracks[0].states[80].position.x, 91.0);
    }

    #[test]
    fn slice_boundaries() {
        let s = toy(100);
        let t0 = s.horizon() - s.t_fut;
        let (_, f) = s.slice_history_future(t0).unwrap();
        assert_eq!(f.first_step + f.len() - 1, s.horizon());
        assert!(matches!(s.slice_history_future(t0 + 1), Err(Error::Bounds(_))));
        assert!(matches!(s.slice_history_future(s.t_hist - 2), Err(Error::Bounds(_))));
    }

    #[test]
    fn signal_cycles() {
        let sig = TrafficSignal {
            position: Vec2::ZERO,
            controlled_lane: 0,
            phases: vec![
                SignalPhase { state: SignalState::Green, duration: 2.0 },
                SignalPhase { state: SignalState::Red, duration: 3.0 },
            ],
        };
        assert_eq!(sig.state_at(1.0), SignalState::Green);
        assert_eq!(sig.state_at(2.5), SignalState::Red);
        assert_eq!(sig.state_at(5.5), SignalState::Green);
    }

    #[test]
    fn validate_rejects_short_sequences() {
        let s = toy(50);
        assert!(s.validate().is_err());
        assert!(toy(92).validate().is_ok());
    }
}
