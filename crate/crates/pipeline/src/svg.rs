//! Minimal self-contained SVG line charts.

use std::fmt::Write;

#[derive(Debug, Clone)]
pub struct Line {
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub width: f64,
    pub opacity: f64,
    pub markers: bool,
}

impl Line {
    pub fn new(points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Self { points, color, width: 1.5, opacity: 1.0, markers: false }
    }

    pub fn faint(mut self) -> Self {
        self.width = 0.8;
        self.opacity = 0.35;
        self
    }

    pub fn bold(mut self) -> Self {
        self.width = 2.5;
        self
    }

    pub fn with_markers(mut self) -> Self {
        self.markers = true;
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub lines: Vec<Line>,
    /// Dashed vertical guides at these x values.
    pub guides: Vec<f64>,
}

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 180.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const TITLE_H: f64 = 22.0;
const GAP: f64 = 26.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Stacks the panels vertically over a shared x range.
pub fn render(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let all_x = panels.iter().flat_map(|p| p.lines.iter().flat_map(|l| l.points.iter().map(|q| q.0)));
    let (x0, x1) = bounds(all_x);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let height = TITLE_H + panels.len() as f64 * (PANEL_H + GAP) + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="16" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    for (i, p) in panels.iter().enumerate() {
        let top = TITLE_H + i as f64 * (PANEL_H + GAP) + 14.0;
        let (y0, y1) = bounds(p.lines.iter().flat_map(|l| l.points.iter().map(|q| q.1)));
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0).max(1e-12) * plot_w;
        let sy = |y: f64| top + PANEL_H - (y - y0) / (y1 - y0) * PANEL_H;
        let _ = writeln!(s, r#"<text x="{MARGIN_L}" y="{:.1}">{}</text>"#, top - 4.0, escape(&p.title));
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_L}" y="{top:.1}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#888"/>"##
        );
        let _ =
            writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y1:.3}</text>"#, MARGIN_L - 4.0, top + 10.0);
        let _ =
            writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y0:.3}</text>"#, MARGIN_L - 4.0, top + PANEL_H);
        for &g in &p.guides {
            let _ = writeln!(
                s,
                r##"<line x1="{0:.2}" y1="{top:.1}" x2="{0:.2}" y2="{1:.1}" stroke="#444" stroke-dasharray="4 3"/>"##,
                sx(g),
                top + PANEL_H
            );
        }
        for l in &p.lines {
            let pts: Vec<String> = l.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="{}" stroke-opacity="{}" points="{}"/>"#,
                l.color,
                l.width,
                l.opacity,
                pts.join(" ")
            );
            if l.markers {
                for &(x, y) in &l.points {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, sx(x), sy(y), l.color);
                }
            }
        }
    }
    let base = height - 6.0;
    let _ = writeln!(s, r#"<text x="{MARGIN_L}" y="{base:.1}">{x0}</text>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{base:.1}" text-anchor="end">{x1}</text>"#, WIDTH - MARGIN_R);
    let _ =
        writeln!(s, r#"<text x="{:.1}" y="{base:.1}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(x_label));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_polyline_per_line_and_escapes_titles() {
        let p = Panel {
            title: "a < b".into(),
            lines: vec![Line::new(vec![(0.0, 1.0), (1.0, 2.0)], "red"), Line::new(vec![(0.0, 0.0)], "gray").faint()],
            guides: vec![0.5],
        };
        let s = render("t & u", "x", &[p]);
        assert!(s.starts_with("<svg"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.contains("a &lt; b") && s.contains("t &amp; u"));
        assert!(s.contains("stroke-dasharray"));
    }

    #[test]
    fn constant_series_do_not_divide_by_zero() {
        let p =
            Panel { title: String::new(), lines: vec![Line::new(vec![(0.0, 3.0), (1.0, 3.0)], "red")], guides: vec![] };
        assert!(!render("", "", &[p]).contains("NaN"));
    }
}
