//! Unicycle dynamics, inverse dynamics and the reverse-mode adjoint of a rollout.
//!
//! One step integrates position with the pre-step speed and heading:
//!
//! ```text
//! x' = x + v cos(theta) dt
//! y' = y + v sin(theta) dt
//! theta' = wrap(theta + yaw_rate dt)
//! v' = clamp(v + accel dt, 0, v_max)
//! ```
//!
//! Actions are clamped to [`ActionLimits`] before integration. Clamped
//! quantities pass zero gradient in [`rollout_adjoint`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, wrap_diff, Vec2};
use crate::scenario::{Action, ActionLimits};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl KinematicState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self { x, y, heading, speed }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite() && self.speed.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsParams {
    pub v_max: f64,
    pub limits: ActionLimits,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            v_max: 20.0,
            limits: ActionLimits::default(),
        }
    }
}

/// Cached intermediates of one rollout step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TapeEntry {
    pub speed: f64,
    pub cos: f64,
    pub sin: f64,
    pub speed_unclamped: f64,
    pub accel_free: bool,
    pub yaw_free: bool,
    pub speed_free: bool,
}

/// Per-step record of a rollout, consumed by [`rollout_adjoint`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutTape {
    pub entries: Vec<TapeEntry>,
    pub dt: f64,
}

impl RolloutTape {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn step_taped(
    s: &KinematicState,
    a: Action,
    dt: f64,
    p: &DynamicsParams,
) -> Result<(KinematicState, TapeEntry)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if !s.is_finite() || !a.accel.is_finite() || !a.yaw_rate.is_finite() {
        return Err(Error::Numeric(format!("non-finite input: state {s:?}, action {a:?}")));
    }
    let c = p.limits.clamp(a);
    let (sin, cos) = s.heading.sin_cos();
    let raw_speed = s.speed + c.accel * dt;
    let speed = raw_speed.clamp(0.0, p.v_max);
    let next = KinematicState {
        x: s.x + s.speed * cos * dt,
        y: s.y + s.speed * sin * dt,
        heading: wrap_angle(s.heading + c.yaw_rate * dt),
        speed,
    };
    let entry = TapeEntry {
        speed: s.speed,
        cos,
        sin,
        speed_unclamped: raw_speed,
        accel_free: a.accel.abs() <= p.limits.accel,
        yaw_free: a.yaw_rate.abs() <= p.limits.yaw_rate,
        speed_free: raw_speed >= 0.0 && raw_speed <= p.v_max,
    };
    Ok((next, entry))
}

pub fn step(s: &KinematicState, a: Action, dt: f64, p: &DynamicsParams) -> Result<KinematicState> {
    step_taped(s, a, dt, p).map(|(n, _)| n)
}

/// Iterates [`step`] from `s0`; the returned trajectory excludes `s0` and has
/// one state per action.
pub fn rollout(
    s0: &KinematicState,
    actions: &[Action],
    dt: f64,
    p: &DynamicsParams,
) -> Result<(Vec<KinematicState>, RolloutTape)> {
    if actions.is_empty() {
        return Err(Error::Shape("rollout needs at least one action".into()));
    }
    let mut traj = Vec::with_capacity(actions.len());
    let mut tape = RolloutTape {
        entries: Vec::with_capacity(actions.len()),
        dt,
    };
    let mut s = *s0;
    for &a in actions {
        let (n, e) = step_taped(&s, a, dt, p)?;
        traj.push(n);
        tape.entries.push(e);
        s = n;
    }
    Ok((traj, tape))
}

/// Gradient of a scalar loss with respect to one trajectory state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StateGrad {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

/// Pulls `dl_dtraj` (one entry per trajectory state) back to the actions.
pub fn rollout_adjoint(
    actions: &[Action],
    dl_dtraj: &[StateGrad],
    tape: &RolloutTape,
) -> Result<Vec<Action>> {
    let n = tape.len();
    if actions.len() != n || dl_dtraj.len() != n {
        return Err(Error::Shape(format!(
            "adjoint lengths differ: actions {}, gradients {}, tape {n}",
            actions.len(),
            dl_dtraj.len()
        )));
    }
    let dt = tape.dt;
    let mut out = vec![Action::ZERO; n];
    let mut adj = StateGrad::default();
    for t in (0..n).rev() {
        let g = dl_dtraj[t];
        adj.x += g.x;
        adj.y += g.y;
        adj.heading += g.heading;
        adj.speed += g.speed;
        let e = &tape.entries[t];
        let speed_pass = if e.speed_free { 1.0 } else { 0.0 };
        out[t] = Action {
            accel: if e.accel_free { adj.speed * dt * speed_pass } else { 0.0 },
            yaw_rate: if e.yaw_free { adj.heading * dt } else { 0.0 },
        };
        adj = StateGrad {
            x: adj.x,
            y: adj.y,
            heading: adj.heading + (-adj.x * e.speed * e.sin + adj.y * e.speed * e.cos) * dt,
            speed: adj.speed * speed_pass + (adj.x * e.cos + adj.y * e.sin) * dt,
        };
    }
    Ok(out)
}

/// Clamp that fired while inverting a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityWarning {
    pub step: usize,
    pub message: String,
}

/// Recovers per-step actions from consecutive states.
pub fn inverse(
    traj: &[KinematicState],
    dt: f64,
    limits: &ActionLimits,
) -> Result<(Vec<Action>, Vec<FeasibilityWarning>)> {
    if traj.len() < 2 {
        return Err(Error::Bounds(format!(
            "inverse dynamics needs at least 2 states, got {}",
            traj.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let mut actions = Vec::with_capacity(traj.len() - 1);
    let mut warnings = Vec::new();
    for (t, w) in traj.windows(2).enumerate() {
        let raw = Action {
            accel: (w[1].speed - w[0].speed) / dt,
            yaw_rate: wrap_diff(w[1].heading, w[0].heading) / dt,
        };
        let a = limits.clamp(raw);
        if a != raw {
            warnings.push(FeasibilityWarning {
                step: t,
                message: format!(
                    "action ({:.3}, {:.3}) clamped to ({:.3}, {:.3})",
                    raw.accel, raw.yaw_rate, a.accel, a.yaw_rate
                ),
            });
        }
        actions.push(a);
    }
    Ok((actions, warnings))
}

/// Kinematic states from positions alone: heading from the displacement
/// direction and speed from its magnitude. The last state repeats the
/// previous heading and speed.
pub fn states_from_positions(points: &[Vec2], dt: f64, initial_heading: f64) -> Vec<KinematicState> {
    let mut out: Vec<KinematicState> = Vec::with_capacity(points.len());
    let mut heading = initial_heading;
    for i in 0..points.len() {
        let (h, v) = if i + 1 < points.len() {
            let d = points[i + 1] - points[i];
            let v = d.norm() / dt;
            if d.norm() > 1e-9 {
                heading = d.angle();
            }
            (heading, v)
        } else {
            out.last().map_or((heading, 0.0), |l| (l.heading, l.speed))
        };
        out.push(KinematicState::new(points[i].x, points[i].y, h, v));
    }
    out
}
