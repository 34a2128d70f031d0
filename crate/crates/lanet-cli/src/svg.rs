//! Standalone SVG figures: map polylines, target history, ground truth, and
//! all K predicted modes with the best (highest-probability) proposal
//! highlighted. Output bytes are deterministic for fixed inputs.

use lanet_core::decoder::Forecast;
use lanet_core::scene::{PolygonKind, Scene};
use std::fmt::Write;

const MARGIN_M: f64 = 5.0;

struct Bounds {
    min_x: f64,
    min_y: f64,
    max_x: f64,
    max_y: f64,
}

impl Bounds {
    fn new() -> Self {
        Self {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        }
    }

    fn add(&mut self, x: f64, y: f64) {
        self.min_x = self.min_x.min(x);
        self.min_y = self.min_y.min(y);
        self.max_x = self.max_x.max(x);
        self.max_y = self.max_y.max(y);
    }
}

/// Render a scene and its forecasts as an SVG 1.1 document.
pub fn render_scene(scene: &Scene, forecasts: &[Forecast]) -> String {
    let mut b = Bounds::new();
    for p in &scene.polygons {
        for pt in &p.points {
            b.add(pt.x, pt.y);
        }
    }
    for a in &scene.agents {
        for (s, &valid) in a.states.iter().zip(&a.valid) {
            if valid {
                b.add(s.x, s.y);
            }
        }
    }
    for f in forecasts {
        for m in &f.modes {
            for p in &m.locations {
                b.add(p[0], p[1]);
            }
        }
    }
    if !b.min_x.is_finite() {
        b = Bounds {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 1.0,
            max_y: 1.0,
        };
    }
    let w = (b.max_x - b.min_x) + 2.0 * MARGIN_M;
    let h = (b.max_y - b.min_y) + 2.0 * MARGIN_M;
    // SVG y grows downward; mirror scene y.
    let tx = |x: f64| x - b.min_x + MARGIN_M;
    let ty = |y: f64| b.max_y - y + MARGIN_M;

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"0 0 {:.3} {:.3}\" width=\"800\" height=\"{:.0}\">",
        w,
        h,
        800.0 * h / w
    );
    out.push_str(concat!(
        "<style>\n",
        ".map-lane_centerline{fill:none;stroke:#9aa0a6;stroke-width:0.15;stroke-dasharray:1.2 0.8;}\n",
        ".map-lane_boundary{fill:none;stroke:#5f6368;stroke-width:0.2;}\n",
        ".map-crosswalk{fill:none;stroke:#b38b00;stroke-width:0.5;stroke-dasharray:0.5 0.5;}\n",
        ".map-road_edge{fill:none;stroke:#7a4b2a;stroke-width:0.3;}\n",
        ".history{fill:none;stroke:#6a1b9a;stroke-width:0.3;}\n",
        ".truth{fill:none;stroke:#1565c0;stroke-width:0.3;}\n",
        ".pred{fill:none;stroke:#8d6e63;stroke-width:0.2;opacity:0.8;}\n",
        ".best{fill:none;stroke:#f9a825;stroke-width:0.35;}\n",
        "</style>\n",
    ));

    let polyline = |out: &mut String, class: &str, pts: &[(f64, f64)]| {
        if pts.len() < 2 {
            return;
        }
        let mut attr = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            if i > 0 {
                attr.push(' ');
            }
            let _ = write!(attr, "{:.3},{:.3}", tx(*x), ty(*y));
        }
        let _ = writeln!(out, "<polyline class=\"{class}\" points=\"{attr}\"/>");
    };

    for p in &scene.polygons {
        let class = match p.kind {
            PolygonKind::LaneCenterline => "map-lane_centerline",
            PolygonKind::LaneBoundary => "map-lane_boundary",
            PolygonKind::Crosswalk => "map-crosswalk",
            PolygonKind::RoadEdge => "map-road_edge",
        };
        let pts: Vec<(f64, f64)> = p.points.iter().map(|pt| (pt.x, pt.y)).collect();
        polyline(&mut out, class, &pts);
    }

    let h_steps = scene.config.history_steps;
    for f in forecasts {
        let Some(agent) = scene.agents.iter().find(|a| a.agent_id == f.agent_id) else {
            continue;
        };
        let history: Vec<(f64, f64)> = agent.states[..h_steps]
            .iter()
            .zip(&agent.valid[..h_steps])
            .filter(|(_, &v)| v)
            .map(|(s, _)| (s.x, s.y))
            .collect();
        polyline(&mut out, "history", &history);
        let truth: Vec<(f64, f64)> = agent.states[h_steps..]
            .iter()
            .zip(&agent.valid[h_steps..])
            .filter(|(_, &v)| v)
            .map(|(s, _)| (s.x, s.y))
            .collect();
        polyline(&mut out, "truth", &truth);

        for m in &f.modes {
            let pts: Vec<(f64, f64)> = m.locations.iter().map(|p| (p[0], p[1])).collect();
            polyline(&mut out, "pred", &pts);
        }
        // Highest-probability mode drawn again on top.
        if let Some(best) = f
            .mode_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
        {
            let pts: Vec<(f64, f64)> = f.modes[best].locations.iter().map(|p| (p[0], p[1])).collect();
            polyline(&mut out, "best", &pts);
        }
    }

    out.push_str("</svg>\n");
    out
}
