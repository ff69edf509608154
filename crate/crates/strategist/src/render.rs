//! Bird's-eye-view rendering: SV-centered, SV initial heading up, meters.
//!
//! Each panel draws its content inside a group whose user units are meters
//! in the SV frame with x to the SV's right and y toward the rear, so a
//! point 10 m ahead of the SV sits at `y = -10` inside the group.

use std::fmt::Write as _;

use forge_core::geometry::Vec2;
use forge_core::scenario::{LaneMap, SignalState, TrafficSignal};
use forge_core::{AgentId, AgentState, AgentType, Scenario};
use serde::{Deserialize, Serialize};

use crate::describe::key_steps;
use crate::error::{Result, StrategistError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Panel side in pixels.
    pub panel_px: f64,
    /// Half the panel side in meters; chosen from the agents when absent.
    pub half_extent: Option<f64>,
    /// Axis tick spacing, meters.
    pub tick: f64,
    /// Trajectory segments drawn per agent at most.
    pub max_segments: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { panel_px: 480.0, half_extent: None, tick: 10.0, max_segments: 60 }
    }
}

/// Agents, lanes and signals of one drawable timeline.
#[derive(Clone, Debug)]
pub struct Scene<'a> {
    pub map: &'a LaneMap,
    pub signals: &'a [TrafficSignal],
    pub dt: f64,
    pub sv_id: AgentId,
    /// Scenario step of index 0 in each track.
    pub first_step: usize,
    pub tracks: Vec<(AgentId, Vec<AgentState>)>,
}

impl<'a> Scene<'a> {
    /// The scenario's own timeline from `from` to the end of the log.
    pub fn from_scenario(s: &'a Scenario, from: usize) -> Self {
        Self {
            map: &s.map,
            signals: &s.signals,
            dt: s.dt,
            sv_id: s.sv_id,
            first_step: from,
            tracks: s.agents.iter().map(|a| (a.id, a.states[from..].to_vec())).collect(),
        }
    }

    fn sv(&self) -> &[AgentState] {
        &self.tracks.iter().find(|(id, _)| *id == self.sv_id).expect("scene has the SV").1
    }

    fn len(&self) -> usize {
        self.tracks.first().map_or(0, |(_, t)| t.len())
    }
}

/// One panel: a scene at an index into its tracks.
#[derive(Clone, Debug)]
pub struct Panel<'a> {
    pub title: String,
    pub scene: &'a Scene<'a>,
    pub index: usize,
}

/// SV frame used for a panel: centered on the SV at the panel step, rotated
/// by its heading at the start of the scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PanelFrame {
    pub center: Vec2,
    pub heading: f64,
}

impl PanelFrame {
    pub fn of(panel: &Panel<'_>) -> Self {
        let sv = panel.scene.sv();
        Self { center: sv[panel.index.min(sv.len() - 1)].position, heading: sv[0].heading }
    }

    /// Drawing coordinates (meters): x to the right, y down the page.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let l = p.to_frame(self.center, self.heading);
        (-l.y, -l.x)
    }
}

fn lerp_color(a: [u8; 3], b: [u8; 3], t: f64) -> String {
    let c = |i: usize| (a[i] as f64 + (b[i] as f64 - a[i] as f64) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(0), c(1), c(2))
}

const START: [u8; 3] = [0x2c, 0x7b, 0xb6];
const END: [u8; 3] = [0xd7, 0x19, 0x1c];

fn f(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn auto_extent(panels: &[Panel<'_>], opts: &RenderOptions) -> f64 {
    let mut reach: f64 = 20.0;
    for p in panels {
        let fr = PanelFrame::of(p);
        for (_, t) in &p.scene.tracks {
            if let Some(s) = t.get(p.index) {
                let (x, y) = fr.project(s.position);
                reach = reach.max(x.abs()).max(y.abs());
            }
        }
    }
    ((reach + 8.0) / opts.tick).ceil().min(10.0) * opts.tick
}

fn panel_svg(out: &mut String, panel: &Panel<'_>, offset_x: f64, half: f64, opts: &RenderOptions, clip: usize) {
    let px = opts.panel_px;
    let scale = px / (2.0 * half);
    let fr = PanelFrame::of(panel);
    let scene = panel.scene;
    let margin = 40.0;
    let (ox, oy) = (offset_x + margin, margin);
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="14" font-family="sans-serif">{}</text>"##,
        f(ox),
        f(oy - 12.0),
        panel.title
    );
    let _ = writeln!(
        out,
        r##"<clipPath id="c{clip}"><rect x="{}" y="{}" width="{}" height="{}"/></clipPath>"##,
        f(-half),
        f(-half),
        f(2.0 * half),
        f(2.0 * half)
    );
    let _ = writeln!(
        out,
        r##"<g transform="translate({} {}) scale({})" clip-path="url(#c{clip})">"##,
        f(ox + px / 2.0),
        f(oy + px / 2.0),
        scale
    );
    let _ = writeln!(out, r##"<rect x="{0}" y="{0}" width="{1}" height="{1}" fill="#f4f4f0"/>"##, f(-half), f(2.0 * half));

    let points = |pts: &[Vec2]| {
        pts.iter().map(|p| fr.project(*p)).map(|(x, y)| format!("{},{}", f(x), f(y))).collect::<Vec<_>>().join(" ")
    };
    let lane_w = 2.0 * scene.map.lane_half_width;
    for lane in &scene.map.lanes {
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#cfcfcf" stroke-width="{}" stroke-linejoin="round"/>"##,
            points(&lane.centerline),
            f(lane_w)
        );
    }
    for lane in &scene.map.lanes {
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#ffffff" stroke-width="0.15" stroke-dasharray="2 2"/>"##,
            points(&lane.centerline)
        );
    }
    for cw in &scene.map.crosswalks {
        let _ = writeln!(out, r##"<polygon points="{}" fill="#e8e0b0" stroke="#b0a060" stroke-width="0.1"/>"##, points(cw));
    }
    let time = (scene.first_step + panel.index) as f64 * scene.dt;
    for s in scene.signals {
        let color = match s.state_at(time) {
            SignalState::Red => "#d7191c",
            SignalState::Green => "#1a9641",
        };
        let (x, y) = fr.project(s.position);
        let _ = writeln!(out, r##"<circle cx="{}" cy="{}" r="0.8" fill="{color}"/>"##, f(x), f(y));
    }

    for (_, track) in &scene.tracks {
        let n = track.len();
        if n < 2 {
            continue;
        }
        let stride = (n - 1).div_ceil(opts.max_segments.max(1));
        let idx: Vec<usize> = (0..n).step_by(stride).chain(std::iter::once(n - 1)).collect();
        for w in idx.windows(2) {
            if w[0] == w[1] {
                continue;
            }
            let (a, b) = (fr.project(track[w[0]].position), fr.project(track[w[1]].position));
            let t = w[0] as f64 / (n - 1) as f64;
            let _ = writeln!(
                out,
                r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="0.35" stroke-opacity="0.8"/>"##,
                f(a.0),
                f(a.1),
                f(b.0),
                f(b.1),
                lerp_color(START, END, t)
            );
        }
    }

    for (id, track) in &scene.tracks {
        let Some(s) = track.get(panel.index) else { continue };
        let fill = if *id == scene.sv_id {
            "#1a9641"
        } else if s.agent_type == AgentType::StaticObject {
            "#9a9a9a"
        } else {
            "#4a4a4a"
        };
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="{fill}" stroke="#000000" stroke-width="0.1"/>"##,
            points(&s.obb().corners())
        );
    }
    let _ = writeln!(out, "</g>");

    // Labels and axes in pixels so text keeps its size.
    let to_px = |(x, y): (f64, f64)| (ox + px / 2.0 + x * scale, oy + px / 2.0 + y * scale);
    for (id, track) in &scene.tracks {
        let Some(s) = track.get(panel.index) else { continue };
        let (x, y) = fr.project(s.position);
        if x.abs() > half || y.abs() > half {
            continue;
        }
        let (lx, ly) = to_px((x, y));
        let label = if *id == scene.sv_id { format!("SV {id}") } else { id.to_string() };
        let _ = writeln!(
            out,
            r##"<text x="{}" y="{}" font-size="11" font-family="sans-serif" fill="#000000">{label}</text>"##,
            f(lx + 8.0),
            f(ly - 6.0)
        );
    }
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#000000" stroke-width="1"/>"##,
        f(ox),
        f(oy),
        f(px),
        f(px)
    );
    let ticks = (half / opts.tick).floor() as i64;
    for i in -ticks..=ticks {
        let m = i as f64 * opts.tick;
        let (tx, _) = to_px((m, 0.0));
        let (_, ty) = to_px((0.0, -m));
        let _ = writeln!(
            out,
            r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#000000"/><text x="{0}" y="{3}" font-size="10" font-family="sans-serif" text-anchor="middle">{4}</text>"##,
            f(tx),
            f(oy + px),
            f(oy + px + 5.0),
            f(oy + px + 17.0),
            m
        );
        let _ = writeln!(
            out,
            r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#000000"/><text x="{3}" y="{4}" font-size="10" font-family="sans-serif" text-anchor="end">{5}</text>"##,
            f(ox - 5.0),
            f(ty),
            f(ox),
            f(ox - 7.0),
            f(ty + 3.0),
            m
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" font-size="11" font-family="sans-serif" text-anchor="middle">lateral (m, right +)</text>"##,
        f(ox + px / 2.0),
        f(oy + px + 32.0)
    );
}

/// Panels side by side sharing one scale.
pub fn render_panels(panels: &[Panel<'_>], opts: &RenderOptions) -> String {
    let half = opts.half_extent.unwrap_or_else(|| auto_extent(panels, opts));
    let panel_w = opts.panel_px + 60.0;
    let w = panel_w * panels.len() as f64 + 20.0;
    let h = opts.panel_px + 90.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{1}" viewBox="0 0 {0} {1}">"##,
        f(w),
        f(h)
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for (i, p) in panels.iter().enumerate() {
        panel_svg(&mut out, p, i as f64 * panel_w, half, opts, i);
    }
    out.push_str("</svg>\n");
    out
}

/// Initial and final panels of a scenario with full trajectories.
pub fn render_bev(scenario: &Scenario) -> String {
    render_bev_with(scenario, &RenderOptions::default())
}

pub fn render_bev_with(scenario: &Scenario, opts: &RenderOptions) -> String {
    let (t0, t1) = key_steps(scenario);
    let scene = Scene::from_scenario(scenario, t0);
    let panels = [
        Panel { title: format!("initial, t = {:.1} s", t0 as f64 * scenario.dt), scene: &scene, index: 0 },
        Panel { title: format!("final, t = {:.1} s", t1 as f64 * scenario.dt), scene: &scene, index: t1 - t0 },
    ];
    render_panels(&panels, opts)
}

/// Final-state panels of two runs of one scenario, e.g. original and generated.
pub fn render_comparison(left: (&str, &Scene<'_>), right: (&str, &Scene<'_>), opts: &RenderOptions) -> String {
    let panel = |(title, scene): (&str, &'_ Scene<'_>)| {
        let index = scene.len().saturating_sub(1);
        (title.to_string(), index)
    };
    let (lt, li) = panel(left);
    let (rt, ri) = panel(right);
    let panels = [Panel { title: lt, scene: left.1, index: li }, Panel { title: rt, scene: right.1, index: ri }];
    render_panels(&panels, opts)
}

/// PNG bytes of an SVG document.
pub fn rasterize(svg: &str) -> Result<Vec<u8>> {
    let mut opt = resvg::usvg::Options::default();
    opt.fontdb_mut().load_system_fonts();
    let tree = resvg::usvg::Tree::from_str(svg, &opt).map_err(|e| StrategistError::Render(e.to_string()))?;
    let size = tree.size().to_int_size();
    let mut pixmap = resvg::tiny_skia::Pixmap::new(size.width(), size.height())
        .ok_or_else(|| StrategistError::Render("empty image".into()))?;
    resvg::render(&tree, resvg::tiny_skia::Transform::default(), &mut pixmap.as_mut());
    pixmap.encode_png().map_err(|e| StrategistError::Render(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_puts_ahead_up() {
        let fr = PanelFrame { center: Vec2::new(5.0, 5.0), heading: std::f64::consts::FRAC_PI_2 };
        let (x, y) = fr.project(Vec2::new(5.0, 15.0));
        assert!(x.abs() < 1e-12 && (y + 10.0).abs() < 1e-12);
        let (x, _) = fr.project(Vec2::new(8.0, 5.0));
        assert!((x - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_endpoints() {
        assert_eq!(lerp_color(START, END, 0.0), "#2c7bb6");
        assert_eq!(lerp_color(START, END, 1.0), "#d7191c");
    }
}
