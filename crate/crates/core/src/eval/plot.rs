use std::fmt::Write as _;
use std::ops::Range;

use crate::model::{AgentState, Scene};

const MAIN_COLORS: [&str; 2] = ["#2e8b57", "#8b5a2b"];
const OTHER_COLOR: &str = "#9a9a9a";
const SERIES_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// One named curve of an attention timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct TimelineSeries {
    pub label: String,
    pub values: Vec<f64>,
}

struct Frame {
    min: AgentState,
    scale: f64,
    height: f64,
}

impl Frame {
    const WIDTH: f64 = 480.0;
    const MARGIN: f64 = 16.0;

    fn fit(points: impl Iterator<Item = AgentState>) -> Frame {
        let (mut lo, mut hi) = (AgentState::new(f64::MAX, f64::MAX), AgentState::new(f64::MIN, f64::MIN));
        for p in points {
            lo = AgentState::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = AgentState::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let span_x = (hi.x - lo.x).max(1.0);
        let span_y = (hi.y - lo.y).max(1.0);
        let scale = (Frame::WIDTH - 2.0 * Frame::MARGIN) / span_x.max(span_y);
        Frame {
            min: lo,
            scale,
            height: span_y * scale + 2.0 * Frame::MARGIN,
        }
    }

    /// SVG coordinates with +y pointing up.
    fn map(&self, p: AgentState) -> (f64, f64) {
        (
            Frame::MARGIN + (p.x - self.min.x) * self.scale,
            self.height - Frame::MARGIN - (p.y - self.min.y) * self.scale,
        )
    }
}

/// Scene trajectories as dots whose radius grows with the step index.
///
/// Observed steps are filled, ground-truth future steps are faded and the
/// forecast (if any) is drawn as rings. `main` agents get distinct colours.
pub fn trajectory_svg(scene: &Scene, forecast: Option<&[Vec<AgentState>]>, main: &[usize]) -> String {
    let all = (0..scene.steps()).flat_map(|t| scene.frame(t).iter().copied());
    let predicted = forecast.into_iter().flatten().flatten().copied();
    let frame = Frame::fit(all.chain(predicted));
    let color = |i: usize| main.iter().position(|&m| m == i).map_or(OTHER_COLOR, |k| MAIN_COLORS[k % 2]);
    let radius = |t: usize| 1.0 + 3.0 * t as f64 / scene.steps().max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        Frame::WIDTH,
        frame.height,
        Frame::WIDTH,
        frame.height
    );
    for t in 0..scene.steps() {
        let opacity = if t < scene.observed() { 1.0 } else { 0.35 };
        for (i, &p) in scene.frame(t).iter().enumerate() {
            let (x, y) = frame.map(p);
            let _ = writeln!(
                svg,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"{}\" fill-opacity=\"{opacity}\"/>",
                radius(t),
                color(i)
            );
        }
    }
    if let Some(rows) = forecast {
        for (h, row) in rows.iter().enumerate() {
            let t = scene.observed() + h;
            for (i, &p) in row.iter().enumerate() {
                let (x, y) = frame.map(p);
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"{}\" stroke-width=\"0.8\"/>",
                    radius(t),
                    color(i)
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Attention curves over time on a `[0, 1]` axis, with `highlight` shaded.
pub fn attention_timeline_svg(title: &str, series: &[TimelineSeries], highlight: Option<Range<usize>>) -> String {
    let (w, h, m) = (520.0, 240.0, 36.0);
    let steps = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let x = |t: f64| m + t / (steps - 1) as f64 * (w - 2.0 * m);
    let y = |v: f64| h - m - v.clamp(0.0, 1.0) * (h - 2.0 * m);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{m}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        escape(title)
    );
    if let Some(r) = highlight.filter(|r| !r.is_empty()) {
        let (x0, x1) = (x(r.start as f64), x((r.end.min(steps) as f64 - 1.0).max(r.start as f64)));
        let _ = writeln!(
            svg,
            "<rect x=\"{x0:.2}\" y=\"{m}\" width=\"{:.2}\" height=\"{}\" fill=\"#f4d35e\" fill-opacity=\"0.35\"/>",
            (x1 - x0).max(1.0),
            h - 2.0 * m
        );
    }
    let _ = writeln!(
        svg,
        "<polyline points=\"{m},{m} {m},{b} {r},{b}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>",
        b = h - m,
        r = w - m
    );
    for (v, label) in [(0.0, "0"), (0.5, "0.5"), (1.0, "1")] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{label}</text>",
            m - 4.0,
            y(v) + 3.0
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[k % SERIES_COLORS.len()];
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(t, &v)| format!("{:.2},{:.2}", x(t as f64), y(v)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>",
            w - m - 120.0,
            20.0 + 13.0 * k as f64,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// The same curves as CSV: `step,<label>...`.
pub fn attention_timeline_csv(series: &[TimelineSeries]) -> String {
    let steps = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let mut out = String::from("step");
    for s in series {
        out.push(',');
        out.push_str(&s.label.replace(',', ";"));
    }
    out.push('\n');
    for t in 0..steps {
        out.push_str(&t.to_string());
        for s in series {
            out.push(',');
            if let Some(v) = s.values.get(t) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
