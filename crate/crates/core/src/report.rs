//! Self-contained SVG figures.
//!
//! Coordinates are printed with two decimals, so identical inputs give
//! identical bytes.

use std::fmt::Write as _;

use chrono::NaiveDate;
use ndarray::Array2;

use crate::dataio::Dataset;
use crate::experiments::EarlinessRow;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 110.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size:.0}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"{extra}/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64) {
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "" } else { " " });
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{d}" fill="none" stroke="{stroke}" stroke-width="{width:.1}"/>"#
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64) {
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "" } else { " " });
        }
        let _ = writeln!(
            self.body,
            r#"<polygon points="{d}" fill="{fill}" fill-opacity="{opacity:.2}" stroke="none"/>"#
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Linear interpolation of the `q` quantile of sorted `v`.
fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Maps index/value pairs into a panel box.
struct Frame {
    x0: f64,
    y0: f64,
    n: usize,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, t: usize) -> f64 {
        let span = (self.n.max(2) - 1) as f64;
        self.x0 + PANEL_W * t as f64 / span
    }

    fn y(&self, v: f64) -> f64 {
        let span = if self.hi > self.lo { self.hi - self.lo } else { 1.0 };
        self.y0 + PANEL_H * (1.0 - (v - self.lo) / span)
    }

    fn axes(&self, svg: &mut Svg, label: &str) {
        svg.rect(self.x0, self.y0, PANEL_W, PANEL_H, "none", r##" stroke="#999""##);
        svg.text(self.x0 - 4.0, self.y0 + 10.0, 9.0, "end", &format!("{:.2}", self.hi));
        svg.text(self.x0 - 4.0, self.y0 + PANEL_H, 9.0, "end", &format!("{:.2}", self.lo));
        svg.text(self.x0 + 4.0, self.y0 + 12.0, 10.0, "start", label);
    }

    fn zero_line(&self, svg: &mut Svg) {
        if self.lo < 0.0 && self.hi > 0.0 {
            let y = self.y(0.0);
            svg.polyline(&[(self.x0, y), (self.x0 + PANEL_W, y)], "#bbb", 0.5);
        }
    }
}

fn date_ticks(svg: &mut Svg, frame: &Frame, dates: &[NaiveDate]) {
    let y = frame.y0 + PANEL_H + 12.0;
    let step = (dates.len() / 6).max(1);
    for t in (0..dates.len()).step_by(step) {
        svg.text(frame.x(t), y, 9.0, "middle", &dates[t].format("%m-%d").to_string());
    }
}

/// Per-class panels: median reflectance per band over time, and the median
/// of L∞-normalised `R_t` with its 25 to 75 percentile band.
///
/// `relevance[i]` is the `R_t` vector of `ds.samples[i]` (or `None` when
/// unavailable).
pub fn class_panels_svg(ds: &Dataset, relevance: &[Option<Vec<f64>>]) -> String {
    let n_t = ds.n_timesteps();
    let n_c = ds.n_classes();
    let row_h = 2.0 * PANEL_H + 60.0;
    let mut svg = Svg::new(PANEL_W + 2.0 * MARGIN + 80.0, row_h * n_c as f64 + MARGIN);

    for c in 0..n_c {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].label == c).collect();
        let y_top = MARGIN / 2.0 + row_h * c as f64;
        svg.text(MARGIN, y_top, 12.0, "start", &format!("{} (n = {})", ds.class_names[c], members.len()));

        let input = Frame { x0: MARGIN, y0: y_top + 8.0, n: n_t, lo: 0.0, hi: 1.0 };
        input.axes(&mut svg, "median reflectance");
        for b in 0..ds.n_bands() {
            let pts: Vec<(f64, f64)> = (0..n_t)
                .map(|t| {
                    let mut v: Vec<f64> = members
                        .iter()
                        .filter(|&&i| ds.samples[i].mask[t])
                        .map(|&i| f64::from(ds.samples[i].values[[b, t]]))
                        .collect();
                    v.sort_by(f64::total_cmp);
                    (input.x(t), input.y(quantile(&v, 0.5)))
                })
                .collect();
            svg.polyline(&pts, PALETTE[b % PALETTE.len()], 1.0);
        }
        for (b, name) in ds.band_names.iter().enumerate() {
            svg.text(
                MARGIN + PANEL_W + 6.0,
                y_top + 16.0 + 8.5 * b as f64,
                8.0,
                "start",
                name,
            );
            svg.rect(MARGIN + PANEL_W + 40.0, y_top + 10.0 + 8.5 * b as f64, 12.0, 6.0, PALETTE[b % PALETTE.len()], "");
        }

        let rel = Frame { x0: MARGIN, y0: y_top + PANEL_H + 20.0, n: n_t, lo: -1.0, hi: 1.0 };
        rel.axes(&mut svg, "R_t, median and 25-75 percentile");
        rel.zero_line(&mut svg);
        let normalized: Vec<Vec<f64>> = members
            .iter()
            .filter_map(|&i| relevance.get(i).cloned().flatten())
            .filter_map(|r| {
                let m = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                (m > 0.0).then(|| r.iter().map(|v| v / m).collect())
            })
            .collect();
        if !normalized.is_empty() {
            let mut q25 = Vec::with_capacity(n_t);
            let mut q50 = Vec::with_capacity(n_t);
            let mut q75 = Vec::with_capacity(n_t);
            for t in 0..n_t {
                let mut v: Vec<f64> = normalized.iter().map(|r| r[t]).collect();
                v.sort_by(f64::total_cmp);
                q25.push((rel.x(t), rel.y(quantile(&v, 0.25))));
                q50.push((rel.x(t), rel.y(quantile(&v, 0.5))));
                q75.push((rel.x(t), rel.y(quantile(&v, 0.75))));
            }
            let band: Vec<(f64, f64)> = q75.iter().chain(q25.iter().rev()).copied().collect();
            svg.polygon(&band, "#d62728", 0.25);
            svg.polyline(&q50, "#d62728", 1.5);
        }
        date_ticks(&mut svg, &rel, ds.axis.dates());
    }
    svg.finish()
}

/// One parcel: its reflectances, `R_t`, and the band-by-time relevance map.
pub fn parcel_svg(
    title: &str,
    values: &Array2<f32>,
    mask: &[bool],
    relevance: &Array2<f64>,
    dates: &[NaiveDate],
    band_names: &[String],
) -> String {
    let (n_b, n_t) = relevance.dim();
    let cell_h = 12.0;
    let heat_h = cell_h * n_b as f64;
    let height = 2.0 * PANEL_H + heat_h + 3.0 * MARGIN + 20.0;
    let mut svg = Svg::new(PANEL_W + 2.0 * MARGIN + 60.0, height);
    svg.text(MARGIN, 16.0, 12.0, "start", title);

    let input = Frame { x0: MARGIN, y0: 24.0, n: n_t, lo: 0.0, hi: 1.0 };
    input.axes(&mut svg, "reflectance");
    for b in 0..n_b {
        let pts: Vec<(f64, f64)> = (0..n_t)
            .filter(|&t| mask[t])
            .map(|t| (input.x(t), input.y(f64::from(values[[b, t]]))))
            .collect();
        svg.polyline(&pts, PALETTE[b % PALETTE.len()], 1.0);
    }

    let rt: Vec<f64> = (0..n_t).map(|t| relevance.column(t).sum()).collect();
    let m = rt.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let rel = Frame { x0: MARGIN, y0: 24.0 + PANEL_H + 16.0, n: n_t, lo: -m, hi: m };
    rel.axes(&mut svg, "R_t");
    rel.zero_line(&mut svg);
    let bar_w = PANEL_W / n_t.max(1) as f64 * 0.8;
    for (t, &v) in rt.iter().enumerate() {
        let (y_a, y_b) = (rel.y(v), rel.y(0.0));
        let fill = if v >= 0.0 { "#d62728" } else { "#1f77b4" };
        svg.rect(rel.x(t) - bar_w / 2.0, y_a.min(y_b), bar_w, (y_a - y_b).abs(), fill, "");
    }

    let y0 = rel.y0 + PANEL_H + 24.0;
    let cell_w = PANEL_W / n_t.max(1) as f64;
    let mb = relevance.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for b in 0..n_b {
        svg.text(MARGIN - 4.0, y0 + cell_h * (b as f64 + 0.8), 8.0, "end", &band_names[b]);
        for t in 0..n_t {
            let v = relevance[[b, t]] / mb;
            svg.rect(
                MARGIN + cell_w * t as f64,
                y0 + cell_h * b as f64,
                cell_w,
                cell_h,
                &diverging(v),
                "",
            );
        }
    }
    let axis_frame = Frame { x0: MARGIN, y0: y0 + heat_h - PANEL_H, n: n_t, lo: 0.0, hi: 1.0 };
    date_ticks(&mut svg, &axis_frame, dates);
    svg.finish()
}

/// Blue for negative, white for zero, red for positive values in `[-1, 1]`.
fn diverging(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let fade = |a: f64| (255.0 * (1.0 - a.abs())).round() as u8;
    if v >= 0.0 {
        format!("#ff{:02x}{:02x}", fade(v), fade(v))
    } else {
        format!("#{:02x}{:02x}ff", fade(v), fade(v))
    }
}

/// Earliness results as a table with the full span first.
pub fn earliness_table_svg(results: &[EarlinessRow]) -> String {
    let cols = ["window", "start", "end", "days", "train acc", "test acc", "delta"];
    let col_w = 90.0;
    let row_h = 22.0;
    let mut svg = Svg::new(col_w * cols.len() as f64 + 20.0, row_h * (results.len() + 2) as f64);
    for (i, c) in cols.iter().enumerate() {
        svg.text(10.0 + col_w * (i as f64 + 0.5), row_h, 12.0, "middle", c);
    }
    let full = results.iter().find(|r| r.window_n.is_none()).map(|r| r.test_accuracy);
    for (k, r) in results.iter().enumerate() {
        let y = row_h * (k as f64 + 2.0);
        let cells = [
            r.window_n.map_or("full".to_string(), |n| format!("n = {n}")),
            r.start.format("%Y-%m-%d").to_string(),
            r.end.format("%Y-%m-%d").to_string(),
            (r.end - r.start).num_days().to_string(),
            format!("{:.2}%", 100.0 * r.train_accuracy),
            format!("{:.2}%", 100.0 * r.test_accuracy),
            full.map_or(String::new(), |f| format!("{:+.2}", 100.0 * (r.test_accuracy - f))),
        ];
        for (i, c) in cells.iter().enumerate() {
            svg.text(10.0 + col_w * (i as f64 + 0.5), y, 11.0, "middle", c);
        }
    }
    svg.finish()
}
