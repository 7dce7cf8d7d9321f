//! Minimal static SVG line charts.

use std::fmt::Write as _;

const W: f64 = 900.0;
const H: f64 = 360.0;
const PAD: f64 = 50.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
    /// Dashed, for thresholds.
    pub dashed: bool,
    /// Plot against the right-hand axis.
    pub right_axis: bool,
}

fn bounds(points: impl Iterator<Item = (f64, f64)>) -> Option<[f64; 4]> {
    let mut b: Option<[f64; 4]> = None;
    for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        let v = b.get_or_insert([x, x, y, y]);
        v[0] = v[0].min(x);
        v[1] = v[1].max(x);
        v[2] = v[2].min(y);
        v[3] = v[3].max(y);
    }
    b.map(|[x0, x1, y0, y1]| {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        [x0, x1, y0, y1]
    })
}

fn num(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

pub fn chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let left = bounds(series.iter().filter(|s| !s.right_axis).flat_map(|s| s.points.iter().copied()));
    let right = bounds(series.iter().filter(|s| s.right_axis).flat_map(|s| s.points.iter().copied()));
    let xs = bounds(series.iter().flat_map(|s| s.points.iter().copied())).unwrap_or([0.0, 1.0, 0.0, 1.0]);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(out, r#"<text x="{PAD}" y="{}" text-anchor="start">{}</text>"#, H - PAD + 15.0, num(xs[0]));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, W - PAD, H - PAD + 15.0, num(xs[1]));
    for (b, x, anchor) in [(left, PAD - 4.0, "end"), (right, W - PAD + 4.0, "start")] {
        if let Some(b) = b {
            let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="{anchor}">{}</text>"#, H - PAD, num(b[2]));
            let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="{anchor}">{}</text>"#, PAD + 10.0, num(b[3]));
        }
    }
    for (i, s) in series.iter().enumerate() {
        let Some(b) = (if s.right_axis { right } else { left }) else { continue };
        let sx = |x: f64| PAD + (x - xs[0]) / (xs[1] - xs[0]) * (W - 2.0 * PAD);
        let sy = |y: f64| H - PAD - (y - b[2]) / (b[3] - b[2]) * (H - 2.0 * PAD);
        let mut path = String::new();
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
            escape(s.label),
            s.color,
            path.trim_end()
        );
        let ly = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}"{dash}/><text x="{}" y="{}">{}</text>"#,
            PAD + 10.0,
            PAD + 30.0,
            s.color,
            PAD + 35.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
