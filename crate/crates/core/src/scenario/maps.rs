//! Parametric road layouts used by the synthetic generator.

use std::f64::consts::FRAC_PI_2;

use crate::geometry::Vec2;

use super::synth::MapTemplate;
use super::{Lane, LaneMap, SignalPhase, SignalState, TrafficSignal};

pub(crate) const LANE_WIDTH: f64 = 3.5;
const HALF_WIDTH: f64 = 1.75;
const BOX_HALF: f64 = 8.0;
const APPROACH: f64 = 92.0;
const EXIT: f64 = 150.0;
const ARC_STEPS: usize = 12;

/// A lane segment where agents may be spawned; `s` range in meters along
/// the lane centerline.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Spawn {
    pub lane: usize,
    pub s_lo: f64,
    pub s_hi: f64,
    /// Approach faces a red signal.
    pub red: bool,
}

impl Spawn {
    fn new(lane: usize, s_lo: f64, s_hi: f64) -> Self {
        Self { lane, s_lo, s_hi, red: false }
    }
}

pub(crate) struct Layout {
    pub map: LaneMap,
    pub signals: Vec<TrafficSignal>,
    pub sv_spawns: Vec<Spawn>,
    pub bv_spawns: Vec<Spawn>,
    /// Shoulder segments for parked vehicles, oriented with traffic.
    pub parking: Vec<(Vec2, Vec2)>,
}

/// The lane map of a template, with the east-west axis holding green.
pub fn template_map(template: MapTemplate) -> LaneMap {
    layout(template, true).map
}

pub(crate) fn layout(template: MapTemplate, ew_green: bool) -> Layout {
    match template {
        MapTemplate::StraightRoad => straight_road(),
        MapTemplate::Curve => curve(),
        MapTemplate::FourWayIntersection => four_way(ew_green),
        MapTemplate::TJunction => t_junction(),
        MapTemplate::RampMerge => ramp_merge(),
    }
}

fn lane(points: Vec<Vec2>, speed_limit: f64) -> Lane {
    Lane { centerline: points, speed_limit, merge: false }
}

fn map(lanes: Vec<Lane>, crosswalks: Vec<Vec<Vec2>>) -> LaneMap {
    LaneMap { lanes, crosswalks, lane_half_width: HALF_WIDTH }
}

fn line(a: Vec2, b: Vec2, step: f64) -> Vec<Vec2> {
    let n = (a.distance(b) / step).ceil().max(1.0) as usize;
    (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
}

fn arc(center: Vec2, radius: f64, from: f64, sweep: f64, steps: usize) -> Vec<Vec2> {
    (0..=steps)
        .map(|i| center + Vec2::from_angle(from + sweep * i as f64 / steps as f64) * radius)
        .collect()
}

fn straight_road() -> Layout {
    let east = |y: f64| lane(line(Vec2::new(-50.0, y), Vec2::new(450.0, y), 25.0), 15.0);
    let west = lane(
        line(Vec2::new(450.0, 2.0 * LANE_WIDTH), Vec2::new(-50.0, 2.0 * LANE_WIDTH), 25.0),
        15.0,
    );
    Layout {
        map: map(vec![east(0.0), east(LANE_WIDTH), west], vec![]),
        signals: vec![],
        sv_spawns: vec![Spawn::new(0, 80.0, 100.0)],
        bv_spawns: vec![Spawn::new(0, 40.0, 220.0), Spawn::new(1, 40.0, 220.0), Spawn::new(2, 150.0, 350.0)],
        parking: vec![(Vec2::new(110.0, -3.0), Vec2::new(300.0, -3.0))],
    }
}

fn curve() -> Layout {
    // Left-hand bend of centerline radius 60 m between an eastbound and a
    // northbound straight; the two forward lanes sit at radii 63.5 and 60.
    let center = Vec2::new(50.0, 63.5);
    let forward = |offset: f64| {
        let r = 63.5 - offset;
        let mut pts = line(Vec2::new(-100.0, offset), Vec2::new(50.0, offset), 25.0);
        pts.pop();
        pts.extend(arc(center, r, -FRAC_PI_2, FRAC_PI_2, 30));
        let end = center + Vec2::new(r, 0.0);
        let mut tail = line(end, end + Vec2::new(0.0, 150.0), 25.0);
        tail.remove(0);
        pts.extend(tail);
        pts
    };
    let mut back = forward(2.0 * LANE_WIDTH);
    back.reverse();
    Layout {
        map: map(vec![lane(forward(0.0), 13.0), lane(forward(LANE_WIDTH), 13.0), lane(back, 13.0)], vec![]),
        signals: vec![],
        sv_spawns: vec![Spawn::new(0, 60.0, 90.0)],
        bv_spawns: vec![Spawn::new(0, 20.0, 200.0), Spawn::new(1, 20.0, 200.0), Spawn::new(2, 0.0, 200.0)],
        parking: vec![(Vec2::new(-80.0, -3.0), Vec2::new(40.0, -3.0))],
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Turn {
    Straight,
    Right,
    Left,
}

/// Route through a junction centered at the origin, entering along unit
/// direction `d` in the right-hand lane.
fn junction_route(d: Vec2, turn: Turn) -> Vec<Vec2> {
    let r = Vec2::new(d.y, -d.x);
    let entry = d * -BOX_HALF + r * HALF_WIDTH;
    let mut pts = line(entry - d * APPROACH, entry, 23.0);
    let (exit, out) = match turn {
        Turn::Straight => (d * BOX_HALF + r * HALF_WIDTH, d),
        Turn::Right => {
            let radius = BOX_HALF - HALF_WIDTH;
            let c = entry + r * radius;
            pts.pop();
            pts.extend(arc(c, radius, (entry - c).angle(), -FRAC_PI_2, ARC_STEPS));
            (r * BOX_HALF - d * HALF_WIDTH, r)
        }
        Turn::Left => {
            let radius = BOX_HALF + HALF_WIDTH;
            let c = entry - r * radius;
            pts.pop();
            pts.extend(arc(c, radius, (entry - c).angle(), FRAC_PI_2, ARC_STEPS));
            (r * -BOX_HALF + d * HALF_WIDTH, -r)
        }
    };
    let mut tail = line(exit, exit + out * EXIT, 25.0);
    if turn != Turn::Straight {
        tail.remove(0);
    } else {
        pts.pop();
    }
    pts.extend(tail);
    pts
}

fn crosswalk(d: Vec2) -> Vec<Vec2> {
    let r = Vec2::new(d.y, -d.x);
    let (near, far) = (BOX_HALF + 1.0, BOX_HALF + 4.0);
    let w = LANE_WIDTH;
    vec![-d * near + r * w, -d * far + r * w, -d * far - r * w, -d * near - r * w]
}

fn stop_signal(d: Vec2, lane: usize, state: SignalState) -> TrafficSignal {
    let r = Vec2::new(d.y, -d.x);
    TrafficSignal {
        position: d * -(BOX_HALF + 4.0) + r * HALF_WIDTH,
        controlled_lane: lane,
        phases: vec![SignalPhase { state, duration: 3600.0 }],
    }
}

const DIRS: [Vec2; 4] = [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(-1.0, 0.0), Vec2::new(0.0, -1.0)];
const TURNS: [Turn; 3] = [Turn::Straight, Turn::Right, Turn::Left];

fn four_way(ew_green: bool) -> Layout {
    // Lane 3a + m: approach a (eastbound, northbound, westbound, southbound),
    // movement m (straight, right, left).
    let mut lanes = Vec::new();
    let mut signals = Vec::new();
    let mut sv_spawns = Vec::new();
    let mut bv_spawns = Vec::new();
    let stop_s = APPROACH - 4.0;
    for (a, &d) in DIRS.iter().enumerate() {
        let green = (a % 2 == 0) == ew_green;
        let state = if green { SignalState::Green } else { SignalState::Red };
        for (m, &turn) in TURNS.iter().enumerate() {
            let idx = 3 * a + m;
            lanes.push(lane(junction_route(d, turn), 12.0));
            signals.push(stop_signal(d, idx, state));
            if green && turn != Turn::Left {
                sv_spawns.push(Spawn::new(idx, 45.0, 70.0));
                bv_spawns.push(Spawn::new(idx, 0.0, 140.0));
            } else if !green && turn == Turn::Straight {
                bv_spawns.push(Spawn { lane: idx, s_lo: 10.0, s_hi: stop_s - 3.0, red: true });
            }
        }
    }
    Layout {
        map: map(lanes, DIRS.iter().map(|&d| crosswalk(d)).collect()),
        signals,
        sv_spawns,
        bv_spawns,
        parking: vec![],
    }
}

fn t_junction() -> Layout {
    let (e, n, w) = (DIRS[0], DIRS[1], DIRS[2]);
    let lanes = vec![
        lane(junction_route(e, Turn::Straight), 13.0),
        lane(junction_route(w, Turn::Straight), 13.0),
        lane(junction_route(e, Turn::Right), 13.0),
        lane(junction_route(w, Turn::Left), 13.0),
        lane(junction_route(n, Turn::Left), 13.0),
        lane(junction_route(n, Turn::Right), 13.0),
    ];
    let signals = vec![
        stop_signal(e, 0, SignalState::Green),
        stop_signal(w, 1, SignalState::Green),
        stop_signal(n, 4, SignalState::Red),
        stop_signal(n, 5, SignalState::Red),
    ];
    let stop_s = APPROACH - 4.0;
    Layout {
        map: map(lanes, vec![crosswalk(n)]),
        signals,
        sv_spawns: vec![Spawn::new(0, 45.0, 70.0), Spawn::new(1, 45.0, 70.0), Spawn::new(2, 45.0, 70.0)],
        bv_spawns: vec![
            Spawn::new(0, 0.0, 150.0),
            Spawn::new(1, 0.0, 150.0),
            Spawn { lane: 4, s_lo: 10.0, s_hi: stop_s - 3.0, red: true },
        ],
        parking: vec![],
    }
}

/// Cubic Hermite curve between two poses.
fn hermite(p0: Vec2, h0: f64, p1: Vec2, h1: f64, steps: usize) -> Vec<Vec2> {
    let scale = p0.distance(p1);
    let (m0, m1) = (Vec2::from_angle(h0) * scale, Vec2::from_angle(h1) * scale);
    (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            let (t2, t3) = (t * t, t * t * t);
            p0 * (2.0 * t3 - 3.0 * t2 + 1.0)
                + m0 * (t3 - 2.0 * t2 + t)
                + p1 * (-2.0 * t3 + 3.0 * t2)
                + m1 * (t3 - t2)
        })
        .collect()
}

fn ramp_merge() -> Layout {
    let main = |y: f64| lane(line(Vec2::new(-100.0, y), Vec2::new(400.0, y), 25.0), 15.0);
    let start = Vec2::new(-100.0, -30.0);
    let bend = Vec2::new(0.0, -12.0);
    let mut pts = line(start, bend, 25.0);
    pts.pop();
    pts.extend(hermite(bend, (bend - start).angle(), Vec2::new(60.0, -LANE_WIDTH), 0.0, 15));
    pts.pop();
    pts.extend(line(Vec2::new(60.0, -LANE_WIDTH), Vec2::new(150.0, -LANE_WIDTH), 25.0));
    pts.pop();
    pts.extend(hermite(Vec2::new(150.0, -LANE_WIDTH), 0.0, Vec2::new(210.0, 0.0), 0.0, 15));
    pts.pop();
    pts.extend(line(Vec2::new(210.0, 0.0), Vec2::new(400.0, 0.0), 25.0));
    let mut ramp = lane(pts, 13.0);
    ramp.merge = true;
    Layout {
        map: map(vec![main(0.0), main(LANE_WIDTH), ramp], vec![]),
        signals: vec![],
        sv_spawns: vec![Spawn::new(0, 40.0, 80.0), Spawn::new(2, 40.0, 70.0)],
        bv_spawns: vec![Spawn::new(0, 0.0, 220.0), Spawn::new(1, 0.0, 220.0), Spawn::new(2, 0.0, 110.0)],
        parking: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::wrap_diff;

    #[test]
    fn junction_turns_end_in_right_hand_lanes() {
        let d = Vec2::new(1.0, 0.0);
        let right = junction_route(d, Turn::Right);
        let left = junction_route(d, Turn::Left);
        let x = right.iter().find(|p| (p.y + BOX_HALF).abs() < 1e-9).unwrap();
        assert!((x.x + HALF_WIDTH).abs() < 1e-9);
        let x = left.iter().find(|p| (p.y - BOX_HALF).abs() < 1e-9).unwrap();
        assert!((x.x - HALF_WIDTH).abs() < 1e-9);
    }

    #[test]
    fn all_templates_have_valid_lanes() {
        for t in MapTemplate::ALL {
            let l = layout(t, true);
            for (i, lane) in l.map.lanes.iter().enumerate() {
                assert!(lane.centerline.windows(2).all(|w| w[0].distance(w[1]) > 1e-6), "{t:?} lane {i}");
                let pl = lane.polyline();
                // no kinks sharper than a 90 degree turn sampled in 12 steps
                for s in [0.0, pl.length() * 0.5] {
                    let h0 = pl.heading_at(s);
                    let h1 = pl.heading_at(s + 1.0);
                    assert!(wrap_diff(h1, h0).abs() < 0.3);
                }
            }
            for sp in l.sv_spawns.iter().chain(&l.bv_spawns) {
                assert!(sp.lane < l.map.lanes.len());
            }
        }
    }
}
