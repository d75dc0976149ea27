use std::fmt::Write as _;
use std::path::Path;

use eivuq::{Error, Result};

/// A 1D predictive field with its ±2σ band, an optional reference curve and
/// measurement markers.
#[derive(Clone, Debug, Default)]
pub struct PlotData {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub reference: Option<Vec<f64>>,
    pub scatter: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Points of the ±2σ band: upper edge left to right, lower edge right to left.
pub fn band_polygon(x: &[f64], mean: &[f64], std: &[f64]) -> Vec<(f64, f64)> {
    let upper = x.iter().zip(mean).zip(std).map(|((x, m), s)| (*x, m + 2.0 * s));
    let lower = x.iter().zip(mean).zip(std).rev().map(|((x, m), s)| (*x, m - 2.0 * s));
    upper.chain(lower).collect()
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    0.5 * twice.abs()
}

fn path(frame: &Frame, pts: impl Iterator<Item = (f64, f64)>) -> String {
    let mut d = String::new();
    for (i, (x, y)) in pts.enumerate() {
        let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, frame.px(x), frame.py(y));
    }
    d
}

/// Render the plot as a standalone SVG document.
pub fn render_svg(data: &PlotData) -> Result<String> {
    let n = data.x.len();
    if n < 2 || data.mean.len() != n || data.std.len() != n || data.reference.as_ref().is_some_and(|r| r.len() != n) {
        return Err(Error::ShapeError(format!(
            "plot needs matching grids of at least two points (x {}, mean {}, std {})",
            n,
            data.mean.len(),
            data.std.len()
        )));
    }
    let band = band_polygon(&data.x, &data.mean, &data.std);
    let (x0, x1) = range(data.x.iter().copied().chain(data.scatter.iter().map(|p| p.0)));
    let ys = band
        .iter()
        .map(|p| p.1)
        .chain(data.reference.iter().flatten().copied())
        .chain(data.scatter.iter().map(|p| p.1));
    let (y0, y1) = range(ys);
    let fr = Frame { x0, x1, y0, y1 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(&data.title));
    // Axes and ticks.
    let (ax0, ax1, ay0, ay1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r#"<path class="axes" d="M{ax0:.2},{ay0:.2} L{ax0:.2},{ay1:.2} L{ax1:.2},{ay1:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let (px, py) = (fr.px(xv), fr.py(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{ay1:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{xv:.2}</text>"#,
            ay1 + 4.0,
            ay1 + 18.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{ax0:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.2}</text>"#,
            ax0 - 4.0,
            ax0 - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (ax0 + ax1) / 2.0,
        H - 10.0,
        escape(&data.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0,
        escape(&data.y_label)
    );
    let _ = writeln!(
        s,
        r##"<path class="band" d="{} Z" fill="#f4a582" fill-opacity="0.5" stroke="none"/>"##,
        path(&fr, band.iter().copied())
    );
    if let Some(r) = &data.reference {
        let _ = writeln!(
            s,
            r#"<path class="reference" d="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
            path(&fr, data.x.iter().copied().zip(r.iter().copied()))
        );
    }
    let _ = writeln!(
        s,
        r##"<path class="mean" d="{}" fill="none" stroke="#b2182b" stroke-width="1.5" stroke-dasharray="6 3"/>"##,
        path(&fr, data.x.iter().copied().zip(data.mean.iter().copied()))
    );
    for (x, y) in &data.scatter {
        let _ = writeln!(
            s,
            r##"<circle class="data" cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="#2166ac"/>"##,
            fr.px(*x),
            fr.py(*y)
        );
    }
    // Legend.
    let lx = ax1 - 150.0;
    let mut items = vec![];
    if data.reference.is_some() {
        items.push("reference");
    }
    items.extend(["mean", "mean ± 2 std"]);
    if !data.scatter.is_empty() {
        items.push("measurements");
    }
    for (i, label) in items.into_iter().enumerate() {
        let ly = ay0 + 10.0 + 16.0 * i as f64;
        let swatch = match label {
            "reference" => format!(
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="black" stroke-width="1.5"/>"#,
                lx + 20.0
            ),
            "mean" => format!(
                r##"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="#b2182b" stroke-width="1.5" stroke-dasharray="6 3"/>"##,
                lx + 20.0
            ),
            "measurements" => format!(r##"<circle cx="{:.1}" cy="{ly:.1}" r="3" fill="none" stroke="#2166ac"/>"##, lx + 10.0),
            _ => format!(
                r##"<rect x="{lx:.1}" y="{:.1}" width="20" height="8" fill="#f4a582" fill-opacity="0.5"/>"##,
                ly - 4.0
            ),
        };
        let _ = writeln!(s, "{swatch}<text x=\"{:.1}\" y=\"{:.1}\">{label}</text>", lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(data: &PlotData, path: &Path) -> Result<()> {
    let svg = render_svg(data)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
