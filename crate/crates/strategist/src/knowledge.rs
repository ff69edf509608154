//! Accident knowledge database: typical conflicts for each SV behavior.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvBehavior {
    GoingStraight,
    Turning,
    LaneChanging,
    RampMerging,
}

impl SvBehavior {
    pub const ALL: [SvBehavior; 4] =
        [SvBehavior::GoingStraight, SvBehavior::Turning, SvBehavior::LaneChanging, SvBehavior::RampMerging];

    pub fn name(self) -> &'static str {
        match self {
            SvBehavior::GoingStraight => "going_straight",
            SvBehavior::Turning => "turning",
            SvBehavior::LaneChanging => "lane_changing",
            SvBehavior::RampMerging => "ramp_merging",
        }
    }
}

impl fmt::Display for SvBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the conflict vehicle sits relative to the SV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictVehicle {
    /// Same direction, one lane over, ahead or alongside.
    Adjacent,
    /// Same direction and lane, ahead.
    Leading,
    /// Crossing the SV's path at a large angle, ahead.
    CrossTraffic,
    /// Opposite direction, ahead.
    Oncoming,
    /// In an adjacent lane behind the SV with no line of sight.
    Occluded,
    /// On a through lane next to or behind a merging SV.
    MainRoad,
    /// On a merge lane.
    Ramp,
}

impl ConflictVehicle {
    pub fn name(self) -> &'static str {
        match self {
            ConflictVehicle::Adjacent => "adjacent vehicle",
            ConflictVehicle::Leading => "leading vehicle",
            ConflictVehicle::CrossTraffic => "cross-traffic vehicle",
            ConflictVehicle::Oncoming => "oncoming vehicle",
            ConflictVehicle::Occluded => "occluded vehicle",
            ConflictVehicle::MainRoad => "main road vehicle",
            ConflictVehicle::Ramp => "ramp vehicle",
        }
    }
}

impl fmt::Display for ConflictVehicle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialBehavior {
    CutIn,
    EmergencyBraking,
    RedLightRunning,
    TrajectoryConflict,
    Collision,
    TrajectoryInterference,
    RearEndCollision,
    ForcibleMerging,
}

impl AdversarialBehavior {
    pub fn name(self) -> &'static str {
        match self {
            AdversarialBehavior::CutIn => "cut-in",
            AdversarialBehavior::EmergencyBraking => "emergency braking",
            AdversarialBehavior::RedLightRunning => "red-light running",
            AdversarialBehavior::TrajectoryConflict => "trajectory conflict",
            AdversarialBehavior::Collision => "collision",
            AdversarialBehavior::TrajectoryInterference => "trajectory interference",
            AdversarialBehavior::RearEndCollision => "rear-end collision",
            AdversarialBehavior::ForcibleMerging => "forcible merging",
        }
    }
}

impl fmt::Display for AdversarialBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct KnowledgeEntry {
    pub sv_behavior: SvBehavior,
    pub conflict_vehicle: ConflictVehicle,
    pub adversarial_behavior: AdversarialBehavior,
    pub description: &'static str,
}

const fn row(
    sv_behavior: SvBehavior,
    conflict_vehicle: ConflictVehicle,
    adversarial_behavior: AdversarialBehavior,
    description: &'static str,
) -> KnowledgeEntry {
    KnowledgeEntry { sv_behavior, conflict_vehicle, adversarial_behavior, description }
}

use AdversarialBehavior as A;
use ConflictVehicle as C;
use SvBehavior as B;

pub static KNOWLEDGE_DB: [KnowledgeEntry; 8] = [
    row(B::GoingStraight, C::Adjacent, A::CutIn, "A car one lane over swerves into the SV's lane just ahead of it."),
    row(B::GoingStraight, C::Leading, A::EmergencyBraking, "The car ahead in the SV's lane stops hard with no warning."),
    row(B::GoingStraight, C::CrossTraffic, A::RedLightRunning, "A car on the crossing road enters the junction against a red signal."),
    row(B::Turning, C::Oncoming, A::TrajectoryConflict, "An oncoming car keeps going straight instead of yielding to the turning SV."),
    row(B::LaneChanging, C::Occluded, A::Collision, "A fast car hidden from view closes in on the lane the SV is moving into."),
    row(B::LaneChanging, C::Adjacent, A::TrajectoryInterference, "A car next to the SV moves into the same target lane at the same time."),
    row(B::RampMerging, C::MainRoad, A::RearEndCollision, "A faster car on the through lane runs into the back of the merging SV."),
    row(B::RampMerging, C::Ramp, A::ForcibleMerging, "A car on the ramp pushes its way onto the main road right in front of the SV."),
];

/// Every row for `behavior`, in database order.
pub fn lookup_knowledge(behavior: SvBehavior) -> Vec<KnowledgeEntry> {
    KNOWLEDGE_DB.iter().filter(|e| e.sv_behavior == behavior).copied().collect()
}

/// The database as a plain-text table, as handed to the VLM.
pub fn knowledge_table() -> String {
    let mut out = String::from("sv_behavior | conflict_vehicle | adversarial_behavior | description\n");
    for e in &KNOWLEDGE_DB {
        out.push_str(&format!(
            "{} | {} | {} | {}\n",
            e.sv_behavior, e.conflict_vehicle, e.adversarial_behavior, e.description
        ));
    }
    out
}
