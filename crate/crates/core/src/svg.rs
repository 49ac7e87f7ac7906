//! Minimal SVG line plots with optional confidence bands.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Lower and upper band edges, drawn as a shaded polygon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<(Vec<f64>, Vec<f64>)>,
    /// Draw markers only.
    #[serde(default)]
    pub points: bool,
}

impl Series {
    pub fn line(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { label: label.into(), x, y, band: None, points: false }
    }

    pub fn scatter(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { points: true, ..Self::line(label, x, y) }
    }

    /// Adds a symmetric `±z·se` band.
    pub fn with_se_band(mut self, se: &[f64], z: f64) -> Self {
        let lo = self.y.iter().zip(se).map(|(y, s)| y - z * s).collect();
        let hi = self.y.iter().zip(se).map(|(y, s)| y + z * s).collect();
        self.band = Some((lo, hi));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plot {
    /// File name (relative to the output directory).
    pub file: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    #[serde(default)]
    pub log_x: bool,
    #[serde(default)]
    pub log_y: bool,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log {
                if v > 0.0 {
                    v.log10()
                } else {
                    continue;
                }
            } else {
                v
            };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad, log }
    }

    fn map(&self, v: f64) -> Option<f64> {
        let v = if self.log {
            if v > 0.0 {
                v.log10()
            } else {
                return None;
            }
        } else {
            v
        };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    /// Tick positions in data coordinates.
    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            if b >= a {
                return (a..=b).map(|e| 10f64.powi(e)).collect();
            }
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(raw);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-12 * step && out.len() < 20 {
            out.push(if self.log { 10f64.powf(t) } else { t });
            t += step;
        }
        out
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders `plot` as a standalone SVG document.
pub fn render(plot: &Plot) -> String {
    let all_x = plot.series.iter().flat_map(|s| s.x.iter().copied());
    let xa = Axis::fit(all_x, plot.log_x);
    let all_y = plot.series.iter().flat_map(|s| {
        let band = s.band.iter().flat_map(|(l, h)| l.iter().chain(h)).copied();
        s.y.iter().copied().chain(band)
    });
    let ya = Axis::fit(all_y, plot.log_y);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let px = |v: f64| xa.map(v).map(|u| LEFT + u * pw);
    let py = |v: f64| ya.map(v).map(|u| TOP + (1.0 - u) * ph);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        esc(&plot.title)
    ));
    for t in xa.ticks() {
        if let Some(x) = px(t) {
            s.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#eee\"/>\n<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
                TOP + ph,
                TOP + ph + 16.0,
                fmt_tick(t)
            ));
        }
    }
    for t in ya.ticks() {
        if let Some(y) = py(t) {
            s.push_str(&format!(
                "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#eee\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                fmt_tick(t)
            ));
        }
    }
    s.push_str(&format!(
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        LEFT + pw / 2.0,
        H - 12.0,
        esc(&plot.x_label)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(&plot.y_label)
    ));

    for (k, series) in plot.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if let Some((lo, hi)) = &series.band {
            let upper: Vec<(f64, f64)> =
                series.x.iter().zip(hi).filter_map(|(&x, &y)| Some((px(x)?, py(y)?))).collect();
            let lower: Vec<(f64, f64)> =
                series.x.iter().zip(lo).filter_map(|(&x, &y)| Some((px(x)?, py(y)?))).collect();
            let pts: Vec<String> =
                upper.iter().chain(lower.iter().rev()).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            if !pts.is_empty() {
                s.push_str(&format!(
                    "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n",
                    pts.join(" ")
                ));
            }
        }
        let pts: Vec<(f64, f64)> =
            series.x.iter().zip(&series.y).filter_map(|(&x, &y)| Some((px(x)?, py(y)?))).collect();
        if series.points {
            for (x, y) in &pts {
                s.push_str(&format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>\n"));
            }
        } else if !pts.is_empty() {
            let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            s.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                p.join(" ")
            ));
        }
        let ly = TOP + 14.0 + 16.0 * k as f64;
        s.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"3\" fill=\"{color}\"/>\n<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            LEFT + 10.0,
            ly - 4.0,
            LEFT + 28.0,
            ly,
            esc(&series.label)
        ));
    }
    s.push_str("</svg>\n");
    s
}
