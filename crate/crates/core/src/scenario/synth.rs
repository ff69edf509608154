//! Synthetic traffic scenarios: IDM lane followers on parametric maps.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, DynamicsParams};
use crate::error::{Error, Result};
use crate::geometry::{Obb, Vec2};
use crate::sim::planner::{red_stops, IdmParams, LaneFollower, Route};

use super::maps::{layout, Spawn};
use super::{
    AgentId, AgentState, AgentTrack, AgentType, BBox, Scenario, DEFAULT_DT, DEFAULT_T_FUT,
    DEFAULT_T_HIST,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapTemplate {
    StraightRoad,
    Curve,
    FourWayIntersection,
    TJunction,
    RampMerge,
}

impl MapTemplate {
    pub const ALL: [MapTemplate; 5] = [
        MapTemplate::StraightRoad,
        MapTemplate::Curve,
        MapTemplate::FourWayIntersection,
        MapTemplate::TJunction,
        MapTemplate::RampMerge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapTemplate::StraightRoad => "straight_road",
            MapTemplate::Curve => "curve",
            MapTemplate::FourWayIntersection => "four_way_intersection",
            MapTemplate::TJunction => "t_junction",
            MapTemplate::RampMerge => "ramp_merge",
        }
    }
}

impl fmt::Display for MapTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MapTemplate::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = MapTemplate::ALL.iter().map(|t| t.name()).collect();
                Error::Config(format!("unknown template `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

const PLACEMENT_ATTEMPTS: usize = 200;
const PARKED_PROBABILITY: f64 = 0.15;

struct Placed {
    state: AgentState,
    driver: Option<LaneFollower>,
}

/// Footprint used for spawn spacing: the box stretched ahead and behind by
/// a speed-dependent headway and widened slightly.
fn spacing_box(s: &AgentState) -> Obb {
    let mut b = s.obb();
    b.length += 10.0 + s.speed();
    b.width += 0.4;
    b
}

fn seed_for(template: MapTemplate, n_agents: usize, seed: u64) -> u64 {
    let t = MapTemplate::ALL.iter().position(|&x| x == template).unwrap() as u64;
    seed ^ (t << 56) ^ ((n_agents as u64) << 40) ^ 0x5DEE_CE66_D1CE_4E5B
}

/// Lane-following IDM traffic on the template map. Deterministic per
/// arguments; the SV is agent 0.
pub fn build_synthetic_scenario(template: MapTemplate, n_agents: usize, seed: u64) -> Result<Scenario> {
    if n_agents == 0 {
        return Err(Error::Config("n_agents must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(template, n_agents, seed));
    let ew_green = rng.random_bool(0.5);
    let lay = layout(template, ew_green);
    let lines = lay.map.polylines();
    let limits = DynamicsParams::default().limits;

    let mut placed: Vec<Placed> = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let mut done = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let parked = i > 0 && !lay.parking.is_empty() && rng.random_bool(PARKED_PROBABILITY);
            let cand = if parked {
                let (a, b) = lay.parking[rng.random_range(0..lay.parking.len())];
                let p = a + (b - a) * rng.random_range(0.0..1.0);
                Placed {
                    state: AgentState {
                        agent_type: AgentType::StaticObject,
                        position: p,
                        heading: (b - a).angle(),
                        velocity: Vec2::ZERO,
                        bbox: BBox::CAR,
                    },
                    driver: None,
                }
            } else {
                let spawns = if i == 0 { &lay.sv_spawns } else { &lay.bv_spawns };
                let sp: Spawn = spawns[rng.random_range(0..spawns.len())];
                let s = rng.random_range(sp.s_lo..=sp.s_hi);
                let lane = &lay.map.lanes[sp.lane];
                let line = &lines[sp.lane];
                let speed = if sp.red {
                    if rng.random_bool(0.5) {
                        0.0
                    } else {
                        rng.random_range(3.0..8.0)
                    }
                } else {
                    lane.speed_limit * rng.random_range(0.5..1.0)
                };
                let heading = line.heading_at(s);
                let params = IdmParams {
                    v0: Some(lane.speed_limit * rng.random_range(0.75..1.0)),
                    time_headway: rng.random_range(1.0..2.0),
                    ..IdmParams::default()
                };
                Placed {
                    state: AgentState {
                        agent_type: AgentType::Vehicle,
                        position: line.point_at(s),
                        heading,
                        velocity: Vec2::from_angle(heading) * speed,
                        bbox: BBox::CAR,
                    },
                    driver: Some(LaneFollower::new(
                        Route::new(line.clone(), lane.speed_limit),
                        params,
                        limits,
                    )),
                }
            };
            let cb = spacing_box(&cand.state);
            let clear = placed.iter().all(|p| {
                cb.overlap(&p.state.obb()).is_none() && spacing_box(&p.state).overlap(&cand.state.obb()).is_none()
            });
            if clear {
                placed.push(cand);
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Placement(format!(
                "could not place agent {i} of {n_agents} on {template} after {PLACEMENT_ATTEMPTS} attempts"
            )));
        }
    }

    let dt = DEFAULT_DT;
    let len = DEFAULT_T_HIST + DEFAULT_T_FUT;
    let dyn_params = DynamicsParams::default();
    let mut tracks: Vec<Vec<AgentState>> = placed.iter().map(|p| vec![p.state]).collect();
    for step in 1..len {
        let time = (step - 1) as f64 * dt;
        let red = red_stops(&lay.map, &lay.signals, time);
        let current: Vec<AgentState> = tracks.iter().map(|t| *t.last().unwrap()).collect();
        for (i, p) in placed.iter().enumerate() {
            let me = current[i];
            let next = match &p.driver {
                None => me,
                Some(driver) => {
                    let others: Vec<&AgentState> =
                        current.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| s).collect();
                    let a = driver.act(&me, &others, &red);
                    me.with_kinematic(&dynamics::step(&me.kinematic(), a, dt, &dyn_params)?)
                }
            };
            tracks[i].push(next);
        }
    }

    let scenario = Scenario {
        id: format!("{template}-n{n_agents}-s{seed}"),
        dt,
        t_hist: DEFAULT_T_HIST,
        t_fut: DEFAULT_T_FUT,
        sv_id: AgentId(0),
        map: lay.map,
        signals: lay.signals,
        agents: tracks
            .into_iter()
            .enumerate()
            .map(|(i, states)| AgentTrack { id: AgentId(i as u32), states })
            .collect(),
    };
    scenario.validate()?;
    Ok(scenario)
}
