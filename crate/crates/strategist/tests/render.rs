mod common;

use std::f64::consts::FRAC_PI_2;

use common::*;
use forge_core::geometry::Vec2;
use forge_strategist::{rasterize, render_bev, scenario_brief};

/// Centroids of the polygons with the given fill, in drawing meters.
fn boxes(svg: &str, fill: &str) -> Vec<(f64, f64, f64, f64)> {
    svg.lines()
        .filter(|l| l.starts_with("<polygon") && l.contains(&format!("fill=\"{fill}\"")))
        .map(|l| {
            let pts = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
            let xy: Vec<(f64, f64)> = pts
                .split(' ')
                .map(|p| {
                    let (x, y) = p.split_once(',').unwrap();
                    (x.parse().unwrap(), y.parse().unwrap())
                })
                .collect();
            let cx = xy.iter().map(|p| p.0).sum::<f64>() / 4.0;
            let cy = xy.iter().map(|p| p.1).sum::<f64>() / 4.0;
            let w = xy.iter().map(|p| p.0).fold(f64::MIN, f64::max) - xy.iter().map(|p| p.0).fold(f64::MAX, f64::min);
            let h = xy.iter().map(|p| p.1).fold(f64::MIN, f64::max) - xy.iter().map(|p| p.1).fold(f64::MAX, f64::min);
            (cx, cy, w, h)
        })
        .collect()
}

fn northbound() -> forge_core::Scenario {
    let mut map = straight_map();
    for lane in &mut map.lanes {
        for p in &mut lane.centerline {
            *p = Vec2::new(-p.y, p.x);
        }
    }
    let sv = cv(0, Vec2::new(0.0, 0.0), FRAC_PI_2, 8.0);
    let ahead = cv(1, Vec2::new(0.0, 10.0), FRAC_PI_2, 8.0);
    scenario("north", map, vec![sv, ahead])
}

#[test]
fn sv_points_up_and_ahead_is_above() {
    let svg = render_bev(&northbound());
    let sv = boxes(&svg, "#1a9641");
    assert_eq!(sv.len(), 2, "one SV box per panel");
    for (cx, cy, w, h) in &sv {
        assert!(cx.abs() < 0.01 && cy.abs() < 0.01);
        assert!(h > w, "SV box is taller than wide: {w} x {h}");
        assert!((h - 4.6).abs() < 0.02);
    }
    let other = boxes(&svg, "#4a4a4a");
    assert_eq!(other.len(), 2);
    for (cx, cy, _, _) in &other {
        assert!(cx.abs() < 0.01);
        assert!((cy + 10.0).abs() < 0.01, "agent drawn at y = {cy}");
    }
}

#[test]
fn bev_has_two_panels_ticks_and_gradient() {
    let svg = render_bev(&northbound());
    assert_eq!(svg.matches("clip-path=").count(), 2);
    assert!(svg.contains("#2c7bb6"));
    assert!(svg.contains(">SV 0<"));
    assert!(svg.contains("lateral (m, right +)"));
}

#[test]
fn render_is_byte_identical() {
    let s = forge_core::scenario::build_synthetic_scenario(forge_core::scenario::MapTemplate::FourWayIntersection, 6, 3).unwrap();
    assert_eq!(render_bev(&s), render_bev(&s));
}

#[test]
fn raster_is_png() {
    let png = rasterize(&render_bev(&northbound())).unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    let brief = scenario_brief(&northbound(), true).unwrap();
    assert_eq!(brief.png.as_deref(), Some(png.as_slice()));
}
