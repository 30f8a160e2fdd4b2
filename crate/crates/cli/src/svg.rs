//! Minimal static SVG renderer: line plots, heatmaps and panel grids.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    pub title: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major; `None` cells are drawn grey.
    pub values: Vec<Option<f64>>,
    /// Colour scale limits; derived from the data when absent.
    pub range: Option<(f64, f64)>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum Panel {
    Line(LinePlot),
    Heat(Heatmap),
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

// Blue (low) through white to red (high).
fn colour(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (40.0 + 215.0 * u, 90.0 + 165.0 * u, 200.0 + 55.0 * u)
    } else {
        let u = (t - 0.5) / 0.5;
        (255.0 - 35.0 * u, 255.0 - 200.0 * u, 255.0 - 215.0 * u)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

impl LinePlot {
    fn draw(&self, out: &mut String, x0: f64, y0: f64, w: f64, h: f64) {
        let (ml, mr, mt, mb) = (52.0, 10.0, 22.0, 34.0);
        let (pw, ph) = (w - ml - mr, h - mt - mb);
        let (xmin, xmax) = bounds(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let (ymin, ymax) = bounds(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let sx = |x: f64| x0 + ml + (x - xmin) / (xmax - xmin) * pw;
        let sy = |y: f64| y0 + mt + ph - (y - ymin) / (ymax - ymin) * ph;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            x0 + w / 2.0,
            y0 + 14.0,
            esc(&self.title)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#888"/>"##,
            x0 + ml,
            y0 + mt
        );
        if ymin < 0.0 && ymax > 0.0 {
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ccc"/>"##,
                x0 + ml,
                sy(0.0),
                x0 + ml + pw,
                sy(0.0)
            );
        }
        for (k, v) in [(0, ymin), (1, ymax)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{}</text>"#,
                x0 + ml - 3.0,
                sy(v) + if k == 0 { 0.0 } else { 8.0 },
                fmt_tick(v)
            );
        }
        for v in [xmin, xmax] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{}</text>"#,
                sx(v),
                y0 + mt + ph + 11.0,
                fmt_tick(v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            x0 + ml + pw / 2.0,
            y0 + h - 6.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            x0 + 12.0,
            y0 + mt + ph / 2.0,
            x0 + 12.0,
            y0 + mt + ph / 2.0,
            esc(&self.y_label)
        );
        for (k, s) in self.series.iter().enumerate() {
            let colour = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.4" points="{}"/>"#,
                pts.join(" ")
            );
            if self.series.len() > 1 {
                let _ = writeln!(
                    out,
                    r#"<text x="{:.1}" y="{:.1}" font-size="9" fill="{colour}">{}</text>"#,
                    x0 + ml + 4.0,
                    y0 + mt + 10.0 + 10.0 * k as f64,
                    esc(&s.label)
                );
            }
        }
    }
}

impl Heatmap {
    fn draw(&self, out: &mut String, x0: f64, y0: f64, w: f64, h: f64) {
        let (ml, mr, mt, mb) = (40.0, 10.0, 22.0, 24.0);
        let (pw, ph) = (w - ml - mr, h - mt - mb);
        let (lo, hi) = self.range.unwrap_or_else(|| bounds(self.values.iter().filter_map(|v| *v)));
        let (cw, ch) = (pw / self.cols.max(1) as f64, ph / self.rows.max(1) as f64);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            x0 + w / 2.0,
            y0 + 14.0,
            esc(&self.title)
        );
        for r in 0..self.rows {
            for c in 0..self.cols {
                let fill = match self.values[r * self.cols + c] {
                    Some(v) if v.is_finite() => colour((v - lo) / (hi - lo)),
                    _ => "#bbbbbb".to_string(),
                };
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                    x0 + ml + c as f64 * cw,
                    y0 + mt + r as f64 * ch,
                    cw + 0.05,
                    ch + 0.05
                );
            }
        }
        let label_every = |n: usize| (n / 16).max(1);
        for (r, l) in self.row_labels.iter().enumerate().step_by(label_every(self.rows)) {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{}</text>"#,
                x0 + ml - 3.0,
                y0 + mt + (r as f64 + 0.5) * ch + 3.0,
                esc(l)
            );
        }
        for (c, l) in self.col_labels.iter().enumerate().step_by(label_every(self.cols)) {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{}</text>"#,
                x0 + ml + (c as f64 + 0.5) * cw,
                y0 + mt + ph + 11.0,
                esc(l)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">[{}, {}]</text>"#,
            x0 + w - mr,
            y0 + h - 4.0,
            fmt_tick(lo),
            fmt_tick(hi)
        );
    }
}

impl Panel {
    fn draw(&self, out: &mut String, x0: f64, y0: f64, w: f64, h: f64) {
        match self {
            Panel::Line(p) => p.draw(out, x0, y0, w, h),
            Panel::Heat(p) => p.draw(out, x0, y0, w, h),
        }
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

pub fn render(panel: &Panel, width: f64, height: f64) -> String {
    let mut body = String::new();
    panel.draw(&mut body, 0.0, 0.0, width, height);
    document(width, height, &body)
}

/// Panels laid out row-major in `cols` columns.
pub fn render_grid(title: &str, panels: &[Panel], cols: usize, cell_w: f64, cell_h: f64) -> String {
    let cols = cols.max(1);
    let rows = panels.len().div_ceil(cols).max(1);
    let top = 26.0;
    let (width, height) = (cols as f64 * cell_w, rows as f64 * cell_h + top);
    let mut body = String::new();
    let _ = writeln!(
        body,
        r#"<text x="{:.1}" y="18" font-size="15" text-anchor="middle">{}</text>"#,
        width / 2.0,
        esc(title)
    );
    for (k, p) in panels.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        p.draw(&mut body, c as f64 * cell_w, top + r as f64 * cell_h, cell_w, cell_h);
    }
    document(width, height, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_documents() {
        let line = Panel::Line(LinePlot {
            title: "a < b".into(),
            x_label: "lag".into(),
            y_label: "score".into(),
            series: vec![Series {
                label: "s".into(),
                points: vec![(-1.0, 0.5), (0.0, f64::NAN), (1.0, 2.0)],
            }],
        });
        let heat = Panel::Heat(Heatmap {
            title: "h".into(),
            rows: 2,
            cols: 2,
            values: vec![Some(0.0), None, Some(1.0), Some(0.5)],
            range: None,
            row_labels: vec!["0".into(), "1".into()],
            col_labels: vec!["0".into(), "1".into()],
        });
        let doc = render_grid("grid", &[line.clone(), heat], 2, 200.0, 150.0);
        assert!(doc.starts_with("<svg") && doc.trim_end().ends_with("</svg>"));
        assert!(doc.contains("a &lt; b"));
        assert!(doc.contains("#bbbbbb"));
        assert_eq!(render(&line, 100.0, 80.0), render(&line, 100.0, 80.0));
    }

    #[test]
    fn colour_scale_endpoints() {
        assert_eq!(colour(0.5), "#ffffff");
        assert_ne!(colour(0.0), colour(1.0));
    }
}
