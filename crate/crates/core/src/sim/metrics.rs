//! Time to collision and the scenario criticality report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::AgentState;

use super::SimLog;

/// TTC values are capped here for reporting.
pub const TTC_CAP: f64 = 10.0;
/// Scenarios with `TTC_min` below this count as high-risk.
pub const T_SAFETY: f64 = 1.0;

/// Constant-velocity time until the footprint circles touch, along the line
/// of centers. Infinite when the pair is not closing.
pub fn ttc_raw(pa: Vec2, va: Vec2, ra: f64, pb: Vec2, vb: Vec2, rb: f64) -> f64 {
    let d = pb - pa;
    let dist = d.norm();
    let gap = (dist - ra - rb).max(0.0);
    if dist == 0.0 {
        return 0.0;
    }
    let closing = -(vb - va).dot(d * (1.0 / dist));
    if closing <= 0.0 {
        return f64::INFINITY;
    }
    gap / closing
}

pub fn pair_ttc(a: &AgentState, b: &AgentState) -> f64 {
    ttc_raw(a.position, a.velocity, a.obb().circumradius(), b.position, b.velocity, b.obb().circumradius())
}

/// Minimum SV TTC over every logged step and agent, capped at [`TTC_CAP`].
pub fn ttc_min(log: &SimLog) -> f64 {
    let mut best = f64::INFINITY;
    for frame in &log.frames {
        let sv = &frame[log.sv_index];
        for (i, o) in frame.iter().enumerate() {
            if i != log.sv_index {
                best = best.min(pair_ttc(sv, o));
            }
        }
    }
    best.min(TTC_CAP)
}

/// Outcome of one run as it enters the report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub collided: bool,
    pub at_fault: bool,
    pub ttc_min: f64,
    /// Fraction of the logged route completed, in `[0, 1]`.
    pub progress: f64,
}

impl RunSummary {
    pub fn of(log: &SimLog) -> Self {
        Self {
            collided: !log.events.is_empty(),
            at_fault: log.events.iter().any(|e| e.at_fault),
            ttc_min: ttc_min(log),
            progress: log.completion.progress,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: usize,
    #[serde(rename = "CR")]
    pub cr: f64,
    #[serde(rename = "CR_fault")]
    pub cr_fault: f64,
    /// Mean of the uncapped per-run `TTC_min`; `None` if every run was capped.
    #[serde(rename = "TTC_min")]
    pub mean_ttc_min: Option<f64>,
    /// Runs left out of the TTC mean because they hit the cap.
    pub ttc_capped: usize,
    #[serde(rename = "E_highrisk")]
    pub e_highrisk: f64,
    #[serde(rename = "PC")]
    pub pc: f64,
}

/// Aggregates run outcomes. Rates are percentages.
pub fn aggregate(runs: &[RunSummary]) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::Config("metrics need at least one run".into()));
    }
    let n = runs.len() as f64;
    let pct = |c: usize| 100.0 * c as f64 / n;
    let collided = runs.iter().filter(|r| r.collided).count();
    let fault = runs.iter().filter(|r| r.collided && r.at_fault).count();
    let finite: Vec<f64> = runs.iter().map(|r| r.ttc_min).filter(|t| *t < TTC_CAP).collect();
    let high = runs.iter().filter(|r| r.ttc_min < T_SAFETY).count();
    let pc = runs.iter().map(|r| r.progress.clamp(0.0, 1.0)).sum::<f64>() / n * 100.0;
    Ok(MetricsReport {
        runs: runs.len(),
        cr: pct(collided),
        cr_fault: pct(fault),
        mean_ttc_min: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        ttc_capped: runs.len() - finite.len(),
        e_highrisk: pct(high),
        pc,
    })
}

pub fn compute_metrics(logs: &[SimLog]) -> Result<MetricsReport> {
    let runs: Vec<RunSummary> = logs.iter().map(RunSummary::of).collect();
    aggregate(&runs)
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn ttc_cell(&self) -> String {
        self.mean_ttc_min.map_or_else(|| "-".to_string(), |t| format!("{t:.2}"))
    }

    /// Human-readable table with an optional label column; rows share a header.
    pub fn table(rows: &[(&str, &MetricsReport)]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>7} {:>9} {:>9} {:>7} {:>12} {:>7}",
            "set", "runs", "CR%", "CRfault%", "TTCmin", "capped", "Ehighrisk%", "PC%"
        );
        for (label, r) in rows {
            let _ = writeln!(
                out,
                "{:<12} {:>5} {:>7.1} {:>9.1} {:>9} {:>7} {:>12.1} {:>7.1}",
                label,
                r.runs,
                r.cr,
                r.cr_fault,
                r.ttc_cell(),
                r.ttc_capped,
                r.e_highrisk,
                r.pc
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_on_point_footprints() {
        let t = ttc_raw(Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0), 0.0, Vec2::new(20.0, 0.0), Vec2::new(-5.0, 0.0), 0.0);
        assert!((t - 2.0).abs() < 1e-12);
        let t = ttc_raw(Vec2::new(0.0, 0.0), Vec2::new(-5.0, 0.0), 0.0, Vec2::new(20.0, 0.0), Vec2::new(5.0, 0.0), 0.0);
        assert_eq!(t, f64::INFINITY);
    }

    #[test]
    fn rates_and_exclusions() {
        let run = |collided, at_fault, ttc, progress| RunSummary { collided, at_fault, ttc_min: ttc, progress };
        let r = aggregate(&[
            run(true, false, 0.0, 0.5),
            run(false, false, TTC_CAP, 1.0),
            run(false, false, 3.0, 1.0),
            run(false, false, TTC_CAP, 1.0),
        ])
        .unwrap();
        assert_eq!(r.cr, 25.0);
        assert_eq!(r.cr_fault, 0.0);
        assert_eq!(r.ttc_capped, 2);
        assert_eq!(r.mean_ttc_min, Some(1.5));
        assert_eq!(r.e_highrisk, 25.0);
        assert!((r.pc - 87.5).abs() < 1e-12);
        assert!(aggregate(&[]).is_err());
    }
}
