//! Minimal deterministic SVG charts. Output depends only on the input data,
//! with coordinates printed at fixed precision.

use std::fmt::Write as _;

pub const SVG_SCHEMA: &str = "latent-bandit-svg 1";

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

pub fn color(index: usize) -> &'static str {
    PALETTE[index % PALETTE.len()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dashed: bool,
    pub markers: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed y range; computed from the data when `None`.
    pub y_range: Option<(f64, f64)>,
    /// Horizontal reference line, e.g. the random baseline.
    pub reference_y: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        MARGIN_LEFT + (x - self.x0) / (self.x1 - self.x0) * w
    }

    fn py(&self, y: f64) -> f64 {
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        MARGIN_TOP + (self.y1 - y) / (self.y1 - self.y0) * h
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Pad a degenerate or empty range so the frame has positive extent.
fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count)
        .map(|i| lo + (hi - lo) * i as f64 / count as f64)
        .collect()
}

fn tick_label(v: f64, span: f64) -> String {
    if span >= 1000.0 {
        format!("{:.0}", v)
    } else if span >= 10.0 {
        format!("{:.1}", v)
    } else {
        format!("{:.2}", v)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<!-- {SVG_SCHEMA} -->");
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        (WIDTH - MARGIN_RIGHT + MARGIN_LEFT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (top, bottom) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
    let _ = writeln!(
        out,
        "<rect x=\"{left:.1}\" y=\"{top:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>",
        right - left,
        bottom - top
    );
    for x in ticks(frame.x0, frame.x1, 5) {
        let px = frame.px(x);
        let _ = writeln!(
            out,
            "<line x1=\"{px:.1}\" y1=\"{bottom:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#333\"/><text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            bottom + 5.0,
            bottom + 19.0,
            tick_label(x, frame.x1 - frame.x0)
        );
    }
    for y in ticks(frame.y0, frame.y1, 5) {
        let py = frame.py(y);
        let _ = writeln!(
            out,
            "<line x1=\"{left:.1}\" y1=\"{py:.1}\" x2=\"{right:.1}\" y2=\"{py:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            left - 6.0,
            py + 4.0,
            tick_label(y, frame.y1 - frame.y0)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        (left + right) / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text transform=\"translate(18 {:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        (top + bottom) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[(&str, &str, bool)]) {
    let x = WIDTH - MARGIN_RIGHT + 14.0;
    for (i, (label, color, dashed)) in entries.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let dash = if *dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            x + 26.0,
            x + 32.0,
            y + 4.0,
            escape(label)
        );
    }
}

impl LineChart {
    fn frame(&self) -> Frame {
        let finite = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in finite {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if let Some(r) = self.reference_y {
            y0 = y0.min(r);
            y1 = y1.max(r);
        }
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = match self.y_range {
            Some(range) => range,
            None => widen(y0, y1),
        };
        Frame { x0, x1, y0, y1 }
    }

    pub fn render(&self) -> String {
        let frame = self.frame();
        let mut out = String::new();
        open(&mut out, &self.title);
        axes(&mut out, &frame, &self.x_label, &self.y_label);
        if let Some(r) = self.reference_y {
            let py = frame.py(r);
            let _ = writeln!(
                out,
                "<line x1=\"{MARGIN_LEFT:.1}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#888\" stroke-dasharray=\"2 3\"/>",
                WIDTH - MARGIN_RIGHT
            );
        }
        for s in &self.series {
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y.clamp(frame.y0, frame.y1))))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{dash} points=\"{}\"/>",
                s.color,
                pts.join(" ")
            );
            if s.markers {
                for p in &pts {
                    let (x, y) = p.split_once(',').expect("formatted pair");
                    let _ = writeln!(out, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{}\"/>", s.color);
                }
            }
        }
        let entries: Vec<(&str, &str, bool)> = self
            .series
            .iter()
            .map(|s| (s.label.as_str(), s.color, s.dashed))
            .collect();
        legend(&mut out, &entries);
        out.push_str("</svg>\n");
        out
    }
}

/// Vertical bars, one per entry; `None` entries are drawn as a hollow marker
/// on the zero line.
#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub values: Vec<Option<f64>>,
    pub y_range: (f64, f64),
}

impl BarChart {
    pub fn render(&self) -> String {
        let n = self.values.len().max(1) as f64;
        let frame = Frame {
            x0: 0.0,
            x1: n,
            y0: self.y_range.0,
            y1: self.y_range.1,
        };
        let mut out = String::new();
        open(&mut out, &self.title);
        axes(&mut out, &frame, &self.x_label, &self.y_label);
        let zero = frame.py(0.0_f64.clamp(frame.y0, frame.y1));
        let width = (frame.px(1.0) - frame.px(0.0)) * 0.8;
        for (i, v) in self.values.iter().enumerate() {
            let left = frame.px(i as f64) + width * 0.125;
            match v {
                Some(v) => {
                    let top = frame.py(v.clamp(frame.y0, frame.y1));
                    let _ = writeln!(
                        out,
                        "<rect x=\"{left:.2}\" y=\"{:.2}\" width=\"{width:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                        top.min(zero),
                        (top - zero).abs(),
                        color(0)
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "<circle cx=\"{:.2}\" cy=\"{zero:.2}\" r=\"3\" fill=\"none\" stroke=\"{}\"/>",
                        left + width / 2.0,
                        color(1)
                    );
                }
            }
        }
        legend(&mut out, &[("defined", color(0), false), ("undefined", color(1), false)]);
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> LineChart {
        LineChart {
            title: "a < b".into(),
            x_label: "step".into(),
            y_label: "R".into(),
            series: vec![Series {
                label: "dqn".into(),
                points: vec![(0.0, 0.0), (10.0, 1.0), (20.0, f64::NAN)],
                color: color(0),
                dashed: true,
                markers: true,
            }],
            y_range: None,
            reference_y: Some(0.0),
        }
    }

    #[test]
    fn render_is_deterministic_and_escaped() {
        let a = chart().render();
        assert_eq!(a, chart().render());
        assert!(a.contains("a &lt; b"));
        assert!(a.starts_with("<svg"));
        assert!(a.contains(SVG_SCHEMA));
        assert!(!a.contains("NaN"));
        assert_eq!(a.matches("<circle").count(), 2);
    }

    #[test]
    fn empty_and_flat_inputs_render() {
        let mut c = chart();
        c.series[0].points = vec![(5.0, 0.3)];
        assert!(!c.render().contains("NaN"));
        c.series.clear();
        c.reference_y = None;
        assert!(c.render().ends_with("</svg>\n"));
        let bars = BarChart {
            title: "rho".into(),
            x_label: "cluster".into(),
            y_label: "rho".into(),
            values: vec![Some(0.5), None, Some(-0.2)],
            y_range: (-1.0, 1.0),
        }
        .render();
        assert_eq!(bars.matches("<rect x=").count(), 1 + 2);
    }
}
