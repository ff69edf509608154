//! Oriented-box collision detection around the SV and responsibility rules.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_diff, Vec2};
use crate::scenario::{AgentId, AgentState, AgentType};

/// SV counts as stationary below this speed (m/s).
pub const STATIONARY_SPEED: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    Front,
    Rear,
    Side,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    /// Simulation step of first contact; frame index in the log.
    pub step: usize,
    pub time: f64,
    pub other: AgentId,
    pub other_type: AgentType,
    /// Unit contact normal from the SV toward the other agent, world frame.
    pub normal: Vec2,
    /// Contact-normal angle in the SV frame, radians.
    pub angle: f64,
    pub sector: Sector,
    pub sv_speed: f64,
    pub sv_stationary: bool,
    pub at_fault: bool,
}

/// Bins the SV-frame angle of the contact normal.
pub fn sector_for_angle(angle: f64) -> Sector {
    let a = angle.abs();
    if a <= std::f64::consts::FRAC_PI_4 {
        Sector::Front
    } else if a >= 3.0 * std::f64::consts::FRAC_PI_4 {
        Sector::Rear
    } else {
        Sector::Side
    }
}

/// SV-frame angle of `normal` and its sector.
pub fn impact_sector(sv: &AgentState, normal: Vec2) -> (f64, Sector) {
    let angle = wrap_diff(normal.angle(), sv.heading);
    (angle, sector_for_angle(angle))
}

/// Whether the SV is responsible. A stationary SV never is; a moving SV is
/// for any static-object contact and for frontal or lateral impacts, but not
/// when struck from behind.
pub fn classify_fault(event: &CollisionEvent) -> bool {
    if event.sv_stationary {
        return false;
    }
    if event.other_type == AgentType::StaticObject {
        return true;
    }
    !matches!(event.sector, Sector::Rear)
}

/// Contact between the SV and `other` at one step, if their boxes overlap.
pub fn contact_event(step: usize, time: f64, sv: &AgentState, other_id: AgentId, other: &AgentState) -> Option<CollisionEvent> {
    let c = sv.obb().overlap(&other.obb())?;
    let (angle, sector) = impact_sector(sv, c.normal);
    let sv_speed = sv.speed();
    let mut e = CollisionEvent {
        step,
        time,
        other: other_id,
        other_type: other.agent_type,
        normal: c.normal,
        angle,
        sector,
        sv_speed,
        sv_stationary: sv_speed < STATIONARY_SPEED,
        at_fault: false,
    };
    e.at_fault = classify_fault(&e);
    Some(e)
}

/// First contact of each SV pair over `frames[t][i]`, sorted by step then id.
pub fn detect_in_frames(
    frames: &[Vec<AgentState>],
    ids: &[AgentId],
    sv_index: usize,
    dt: f64,
) -> Vec<CollisionEvent> {
    let mut seen = vec![false; ids.len()];
    let mut out = Vec::new();
    for (t, frame) in frames.iter().enumerate() {
        let sv = &frame[sv_index];
        for (i, o) in frame.iter().enumerate() {
            if i == sv_index || seen[i] {
                continue;
            }
            if let Some(e) = contact_event(t, t as f64 * dt, sv, ids[i], o) {
                seen[i] = true;
                out.push(e);
            }
        }
    }
    out.sort_by(|a, b| a.step.cmp(&b.step).then(a.other.cmp(&b.other)));
    out
}
