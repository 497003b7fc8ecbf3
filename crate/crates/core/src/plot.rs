//! Minimal SVG rendering for the diagnostic plots.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

/// Reference line drawn under a scatter plot.
#[derive(Debug, Clone, Copy)]
pub enum Reference {
    /// y = x
    Diagonal,
    /// y = c
    Horizontal(f64),
    None,
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn around(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = padded_range(xs);
        let (y0, y1) = padded_range(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.04;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, title: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (top, bottom) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
    writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    )
    .unwrap();
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let (px, py) = (f.px(xv), f.py(yv));
        writeln!(out, r#"<line x1="{px:.2}" y1="{bottom}" x2="{px:.2}" y2="{}" stroke="black"/>"#, bottom + 5.0).unwrap();
        writeln!(out, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, bottom + 18.0, tick(xv)).unwrap();
        writeln!(out, r#"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/>"#, left - 5.0).unwrap();
        writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 8.0, py + 4.0, tick(yv)).unwrap();
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        HEIGHT - 15.0,
        escape(xlabel)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(ylabel)
    )
    .unwrap();
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Bar chart of histogram counts over `edges` (`counts.len() + 1` edges).
pub fn histogram_svg(edges: &[f64], counts: &[usize], title: &str, xlabel: &str) -> String {
    let mut out = String::new();
    open(&mut out, title);
    let max_count = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let f = Frame {
        x0: edges[0],
        x1: if edges[edges.len() - 1] > edges[0] { edges[edges.len() - 1] } else { edges[0] + 1.0 },
        y0: 0.0,
        y1: max_count * 1.05,
    };
    axes(&mut out, &f, xlabel, "count");
    for (i, &c) in counts.iter().enumerate() {
        let (xa, xb) = (f.px(edges[i]), f.px(edges[i + 1]));
        let (ya, yb) = (f.py(c as f64), f.py(0.0));
        writeln!(
            out,
            r##"<rect class="bar" x="{xa:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="#4477aa" stroke="white"/>"##,
            (xb - xa).max(0.5),
            yb - ya
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter plot of (x, y) points with an optional reference line.
pub fn scatter_svg(points: &[(f64, f64)], title: &str, xlabel: &str, ylabel: &str, reference: Reference) -> String {
    let mut out = String::new();
    open(&mut out, title);
    let f = Frame::around(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    axes(&mut out, &f, xlabel, ylabel);
    match reference {
        Reference::Diagonal => {
            let a = f.x0.max(f.y0);
            let b = f.x1.min(f.y1);
            if a < b {
                writeln!(
                    out,
                    r#"<line class="reference" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
                    f.px(a),
                    f.py(a),
                    f.px(b),
                    f.py(b)
                )
                .unwrap();
            }
        }
        Reference::Horizontal(c) if c >= f.y0 && c <= f.y1 => {
            writeln!(
                out,
                r#"<line class="reference" x1="{MARGIN_LEFT}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
                f.py(c),
                WIDTH - MARGIN_RIGHT,
                f.py(c)
            )
            .unwrap();
        }
        _ => {}
    }
    for &(x, y) in points {
        writeln!(
            out,
            r##"<circle cx="{:.2}" cy="{:.2}" r="1.8" fill="#4477aa" fill-opacity="0.5"/>"##,
            f.px(x),
            f.py(y)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Points at (lon, lat) colored by the sign of `value` (blue positive, red
/// negative) with opacity scaled by magnitude.
pub fn residual_map_svg(points: &[(f64, f64, f64)], title: &str) -> String {
    let mut out = String::new();
    open(&mut out, title);
    let f = Frame::around(points.iter().map(|p| p.1), points.iter().map(|p| p.0));
    axes(&mut out, &f, "longitude", "latitude");
    let scale = points.iter().map(|p| p.2.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for &(lat, lon, v) in points {
        let color = if v >= 0.0 { "#2166ac" } else { "#b2182b" };
        let alpha = 0.15 + 0.85 * (v.abs() / scale).min(1.0);
        writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.2" fill="{color}" fill-opacity="{alpha:.3}"/>"#,
            f.px(lon),
            f.py(lat)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
