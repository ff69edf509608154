//! SV-relative geometry and compass bins.

use std::f64::consts::PI;
use std::fmt;

use forge_core::geometry::{wrap_diff, Vec2};
use forge_core::AgentState;
use serde::{Deserialize, Serialize};

/// Eight 45 degree sectors in the SV frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bin {
    Front,
    FrontLeft,
    Left,
    RearLeft,
    Rear,
    RearRight,
    Right,
    FrontRight,
}

impl Bin {
    /// Counter-clockwise from straight ahead.
    pub const ALL: [Bin; 8] =
        [Bin::Front, Bin::FrontLeft, Bin::Left, Bin::RearLeft, Bin::Rear, Bin::RearRight, Bin::Right, Bin::FrontRight];

    pub fn name(self) -> &'static str {
        match self {
            Bin::Front => "front",
            Bin::FrontLeft => "front-left",
            Bin::Left => "left",
            Bin::RearLeft => "rear-left",
            Bin::Rear => "rear",
            Bin::RearRight => "rear-right",
            Bin::Right => "right",
            Bin::FrontRight => "front-right",
        }
    }

    pub fn is_ahead(self) -> bool {
        matches!(self, Bin::Front | Bin::FrontLeft | Bin::FrontRight)
    }

    pub fn is_behind(self) -> bool {
        matches!(self, Bin::Rear | Bin::RearLeft | Bin::RearRight)
    }
}

impl fmt::Display for Bin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sector of a bearing (radians, positive to the left). Points in the front
/// or rear sector that sit outside the SV's own lane (`|lateral| >
/// lane_half_width`) move to the neighbouring diagonal sector, so a car one
/// lane over is never reported as directly ahead.
pub fn bearing_bin(bearing: f64, lateral: f64, lane_half_width: f64) -> Bin {
    let idx = ((bearing.rem_euclid(2.0 * PI) + PI / 8.0) / (PI / 4.0)).floor() as usize % 8;
    let bin = Bin::ALL[idx];
    let left = lateral > 0.0;
    match bin {
        Bin::Front if lateral.abs() > lane_half_width => {
            if left {
                Bin::FrontLeft
            } else {
                Bin::FrontRight
            }
        }
        Bin::Rear if lateral.abs() > lane_half_width => {
            if left {
                Bin::RearLeft
            } else {
                Bin::RearRight
            }
        }
        b => b,
    }
}

/// Another agent seen from the SV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Relative {
    /// Ahead of the SV along its heading, meters.
    pub longitudinal: f64,
    /// To the SV's left, meters.
    pub lateral: f64,
    pub distance: f64,
    pub bearing: f64,
    pub bin: Bin,
    /// Other heading minus SV heading, wrapped.
    pub heading_diff: f64,
    /// Closing speed along the line of centers; positive when approaching.
    pub closing_speed: f64,
}

pub fn relative(sv: &AgentState, other: &AgentState, lane_half_width: f64) -> Relative {
    relative_to(sv.position, sv.heading, sv.velocity, other, lane_half_width)
}

/// Like [`relative`] with an explicit reference pose.
pub fn relative_to(origin: Vec2, heading: f64, velocity: Vec2, other: &AgentState, lane_half_width: f64) -> Relative {
    let local = other.position.to_frame(origin, heading);
    let d = other.position - origin;
    let distance = d.norm();
    let closing_speed = if distance > 0.0 { -(other.velocity - velocity).dot(d * (1.0 / distance)) } else { 0.0 };
    let bearing = local.y.atan2(local.x);
    Relative {
        longitudinal: local.x,
        lateral: local.y,
        distance,
        bearing,
        bin: bearing_bin(bearing, local.y, lane_half_width),
        heading_diff: wrap_diff(other.heading, heading),
        closing_speed,
    }
}
