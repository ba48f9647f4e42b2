//! Just enough SVG to chart evaluation and regression outputs.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 440.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

/// Square heat map with row and column labels; cell text shows the value.
pub fn heatmap(values: &[Vec<f64>], row_labels: &[&str], col_labels: &[&str], title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = header(title);
    let rows = values.len().max(1);
    let cols = values.first().map_or(1, Vec::len).max(1);
    let cw = (W - 2.0 * MARGIN - 40.0) / cols as f64;
    let ch = (H - 2.0 * MARGIN - 20.0) / rows as f64;
    let (x0, y0) = (MARGIN + 40.0, MARGIN);
    let max = values.iter().flatten().copied().fold(0.0, f64::max).max(1e-12);
    for (r, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v / max)).round() as u8;
            let (x, y) = (x0 + c as f64 * cw, y0 + r as f64 * ch);
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cw:.1}\" height=\"{ch:.1}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#444\"/>"
            );
            let fill = if v / max > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{fill}\">{v:.2}</text>",
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    for (r, l) in row_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            x0 - 6.0,
            y0 + (r as f64 + 0.5) * ch + 4.0,
            escape(l)
        );
    }
    for (c, l) in col_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x0 + (c as f64 + 0.5) * cw,
            y0 + rows as f64 * ch + 16.0,
            escape(l)
        );
    }
    axis_labels(&mut s, xlabel, ylabel);
    s.push_str("</svg>\n");
    s
}

fn axis_labels(s: &mut String, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Optional `(low, high)` envelope per point.
    pub band: Option<Vec<(f64, f64)>>,
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn fit(series: &[Series], y_fixed: Option<(f64, f64)>) -> Self {
        let pts = series.iter().flat_map(|s| s.points.iter());
        let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        if let Some((lo, hi)) = y_fixed {
            y_min = lo;
            y_max = hi;
        }
        if !x_min.is_finite() {
            (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
        }
        if x_max <= x_min {
            x_max = x_min + 1.0;
        }
        if y_max <= y_min {
            y_max = y_min + 1.0;
        }
        Self { x_min, x_max, y_min, y_max }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (H - 2.0 * MARGIN)
    }

    fn axes(&self, s: &mut String) {
        let _ = writeln!(
            s,
            "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
            m = MARGIN,
            b = H - MARGIN,
            r = W - MARGIN
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x_min + f * (self.x_max - self.x_min);
            let yv = self.y_min + f * (self.y_max - self.y_min);
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                self.px(xv),
                H - MARGIN + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                MARGIN - 6.0,
                self.py(yv) + 4.0,
                tick(yv)
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(s: &mut String, names: impl Iterator<Item = String>) {
    for (i, name) in names.enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            W - MARGIN - 110.0,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            W - MARGIN - 96.0,
            y,
            escape(&name)
        );
    }
}

/// Line chart with optional shaded envelopes.
pub fn line_chart(series: &[Series], title: &str, xlabel: &str, ylabel: &str, y_range: Option<(f64, f64)>) -> String {
    let mut s = header(title);
    let f = Frame::fit(series, y_range);
    f.axes(&mut s);
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &ser.band {
            let mut pts: Vec<String> = ser
                .points
                .iter()
                .zip(band)
                .map(|(&(x, _), &(_, hi))| format!("{:.1},{:.1}", f.px(x), f.py(hi)))
                .collect();
            pts.extend(
                ser.points
                    .iter()
                    .zip(band)
                    .rev()
                    .map(|(&(x, _), &(lo, _))| format!("{:.1},{:.1}", f.px(x), f.py(lo))),
            );
            let _ = writeln!(s, "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\"/>", pts.join(" "));
        }
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", pts.join(" "));
    }
    legend(&mut s, series.iter().map(|x| x.name.clone()));
    axis_labels(&mut s, xlabel, ylabel);
    s.push_str("</svg>\n");
    s
}

/// Scatter plot; each series gets its own colour. A dashed identity line is
/// drawn when `identity` is set.
pub fn scatter(series: &[Series], title: &str, xlabel: &str, ylabel: &str, identity: bool) -> String {
    let mut s = header(title);
    let f = Frame::fit(series, None);
    f.axes(&mut s);
    if identity {
        let lo = f.x_min.max(f.y_min);
        let hi = f.x_max.min(f.y_max);
        if hi > lo {
            let _ = writeln!(
                s,
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
                f.px(lo),
                f.py(lo),
                f.px(hi),
                f.py(hi)
            );
        }
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for &(x, y) in &ser.points {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2\" fill=\"{color}\" fill-opacity=\"0.5\"/>",
                f.px(x),
                f.py(y)
            );
        }
    }
    legend(&mut s, series.iter().map(|x| x.name.clone()));
    axis_labels(&mut s, xlabel, ylabel);
    s.push_str("</svg>\n");
    s
}
