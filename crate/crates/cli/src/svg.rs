//! Minimal hand-rolled SVG output: a tag builder plus a top-down scene
//! renderer for the intersection and vehicle boxes.

use crossway_core::math::Vec2;
use crossway_core::replay::VehiclePose;
use crossway_core::road_net::RoadNetwork;
use std::fmt::Write;

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Svg {
        Svg { width, height, body: String::new() }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, style: &str) {
        writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" style="{style}"/>"#
        )
        .unwrap();
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" style="{style}"/>"#
        )
        .unwrap();
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, style: &str) {
        writeln!(
            self.body,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" style="{style}"/>"#
        )
        .unwrap();
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], style: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        writeln!(
            self.body,
            r#"<polyline points="{}" style="fill:none;{style}"/>"#,
            pts.join(" ")
        )
        .unwrap();
    }

    pub fn polygon(&mut self, points: &[(f64, f64)], style: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        writeln!(self.body, r#"<polygon points="{}" style="{style}"/>"#, pts.join(" ")).unwrap();
    }

    pub fn text(&mut self, x: f64, y: f64, style: &str, content: &str) {
        writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" style="{style}">{}</text>"#,
            esc(content)
        )
        .unwrap();
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

/// World-to-screen mapping centered on the origin, y flipped so north is up.
pub struct Camera {
    pub scale: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    pub fn map(&self, p: Vec2) -> (f64, f64) {
        (self.cx + p.x * self.scale, self.cy - p.y * self.scale)
    }
}

/// Render lane centerlines, the junction box, the goal disc, and one box per
/// vehicle (ego highlighted). Vehicle footprints use the fleet-wide box.
pub fn render_scene(
    net: &RoadNetwork,
    vehicles: &[VehiclePose],
    goal: Option<(Vec2, f64)>,
    caption: &str,
) -> String {
    let (w, h) = (640.0, 640.0);
    let cam = Camera { scale: w / 150.0, cx: w / 2.0, cy: h / 2.0 };
    let mut svg = Svg::new(w, h);
    svg.rect(0.0, 0.0, w, h, "fill:#f6f6f4");

    let half = net.junction_half_size();
    let (jx, jy) = cam.map(Vec2::new(-half, half));
    svg.rect(jx, jy, 2.0 * half * cam.scale, 2.0 * half * cam.scale, "fill:#e8e8e2");

    for lane in net.lanes() {
        let len = lane.length();
        let n = (len / 2.0).ceil().max(2.0) as usize;
        let pts: Vec<(f64, f64)> = (0..=n)
            .map(|i| cam.map(lane.centerline.point_at(len * i as f64 / n as f64)))
            .collect();
        svg.polyline(&pts, "stroke:#b9b9b2;stroke-width:1");
    }

    if let Some((g, radius)) = goal {
        let (gx, gy) = cam.map(g);
        svg.circle(gx, gy, radius * cam.scale, "fill:#7fc97f;fill-opacity:0.35;stroke:#4a9a4a");
    }

    for (i, v) in vehicles.iter().enumerate() {
        let (length, width) = (5.0, 2.0);
        let fwd = Vec2::from_heading(v.psi);
        let side = fwd.perp();
        let c = Vec2::new(v.x, v.y);
        let corners: Vec<(f64, f64)> = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)]
            .iter()
            .map(|(a, b)| cam.map(c + fwd * (a * length / 2.0) + side * (b * width / 2.0)))
            .collect();
        let style = if i == 0 {
            "fill:#d95f02;stroke:#8a3d00;stroke-width:1"
        } else {
            "fill:#5577aa;stroke:#2f4a77;stroke-width:1"
        };
        svg.polygon(&corners, style);
    }

    svg.text(10.0, 20.0, "font-size:13px;fill:#333", caption);
    svg.finish()
}
