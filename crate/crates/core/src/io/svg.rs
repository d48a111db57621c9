use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Corridor, Point};
use crate::orchestrator::Session;

/// Base and darker (re-plan) colors, assigned to aircraft in id order.
const PALETTE: [(&str, &str); 6] = [
    ("#e41a1c", "#8b0000"),
    ("#377eb8", "#0b2f6b"),
    ("#4daf4a", "#1b5e20"),
    ("#ff7f00", "#a04c00"),
    ("#984ea3", "#4a1452"),
    ("#a6761d", "#5c3f0a"),
];

const WIDTH: f64 = 800.0;
const PAD: f64 = 20.0;

/// Which layers of a run record to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SvgOptions {
    pub disks: bool,
    pub centers: bool,
    pub pilots: bool,
    /// Draw corridors of later cycles in the darker shade.
    pub replans: bool,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self {
            disks: true,
            centers: true,
            pilots: true,
            replans: true,
        }
    }
}

struct Frame {
    x0: f64,
    y1: f64,
    scale: f64,
}

impl Frame {
    fn px(&self, p: Point) -> (f64, f64) {
        (PAD + (p[0] - self.x0) * self.scale, PAD + (self.y1 - p[1]) * self.scale)
    }
}

fn polyline(out: &mut String, class: &str, color: &str, pts: &[Point], frame: &Frame) {
    let coords: Vec<String> = pts
        .iter()
        .map(|p| {
            let (x, y) = frame.px(*p);
            format!("{x:.3},{y:.3}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        coords.join(" ")
    );
}

fn disks(out: &mut String, class: &str, color: &str, opacity: f64, c: &Corridor, frame: &Frame) {
    for k in c.interior() {
        let (p, r) = c.disk_at(k).expect("interior step");
        let (x, y) = frame.px(p);
        let _ = writeln!(
            out,
            r#"<circle class="disk {class}" data-aircraft="{}" data-k="{k}" cx="{x:.3}" cy="{y:.3}" r="{:.3}" fill="{color}" fill-opacity="{opacity}" stroke="{color}" stroke-width="0.5"/>"#,
            c.aircraft_id,
            r * frame.scale
        );
    }
}

/// Renders the corridors and selections of a run record as an SVG document.
/// Output depends only on the record and options.
pub fn render_svg(session: &Session, options: &SvgOptions) -> Result<String> {
    let first = session
        .history
        .first()
        .ok_or_else(|| Error::invalid("run record has no planning cycles to draw"))?;
    let cycles: Vec<_> = if options.replans {
        session.history.iter().collect()
    } else {
        vec![first]
    };

    let mut ids: Vec<_> = session.scenario.aircraft.iter().map(|a| a.id).collect();
    ids.sort_unstable();
    let color = |id, dark: bool| {
        let i = ids.iter().position(|x| *x == id).unwrap_or(0) % PALETTE.len();
        if dark {
            PALETTE[i].1
        } else {
            PALETTE[i].0
        }
    };

    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: Point, r: f64| {
        x0 = x0.min(p[0] - r);
        x1 = x1.max(p[0] + r);
        y0 = y0.min(p[1] - r);
        y1 = y1.max(p[1] + r);
    };
    for cycle in &cycles {
        for c in cycle.corridors() {
            for (p, r) in c.centers.iter().zip(&c.radii) {
                grow(*p, *r);
            }
        }
        for t in cycle.selections() {
            t.positions().into_iter().for_each(|p| grow(p, 0.0));
        }
    }
    if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
        return Err(Error::invalid("run record has non-finite geometry"));
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = WIDTH / span;
    let frame = Frame { x0, y1, scale };
    let w = (x1 - x0) * scale + 2.0 * PAD;
    let h = (y1 - y0) * scale + 2.0 * PAD;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.3}" height="{h:.3}" viewBox="0 0 {w:.3} {h:.3}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (n, cycle) in cycles.iter().enumerate() {
        let dark = n > 0;
        let layer = if dark { "replan" } else { "plan" };
        let _ = writeln!(out, r#"<g class="cycle {layer}" data-plan-time="{}">"#, cycle.plan_time);
        for c in cycle.corridors() {
            let col = color(c.aircraft_id, dark);
            if options.disks {
                disks(&mut out, layer, col, if dark { 0.35 } else { 0.2 }, &c, &frame);
            }
            if options.centers {
                polyline(&mut out, "centers", col, &c.centers, &frame);
            }
        }
        if options.pilots {
            for t in cycle.selections() {
                polyline(&mut out, "pilot", color(t.aircraft_id, true), &t.positions(), &frame);
            }
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_svg(session: &Session, path: impl AsRef<Path>, options: &SvgOptions) -> Result<()> {
    std::fs::write(path, render_svg(session, options)?)?;
    Ok(())
}
