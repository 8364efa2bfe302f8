//! Standalone SVG plots of experiment tables.
//!
//! Output depends only on the table: coordinates are printed with fixed precision and
//! nothing time- or environment-dependent is embedded.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::stats::LineFit;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 48.0;
const BOTTOM: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    LogLog,
    LogLinear,
    TimeSeries,
}

impl PlotKind {
    pub fn parse(s: &str) -> Option<PlotKind> {
        match s.to_ascii_lowercase().as_str() {
            "loglog" => Some(PlotKind::LogLog),
            "loglinear" => Some(PlotKind::LogLinear),
            "timeseries" => Some(PlotKind::TimeSeries),
            _ => None,
        }
    }

    fn log_x(self) -> bool {
        self == PlotKind::LogLog
    }

    fn log_y(self) -> bool {
        self != PlotKind::TimeSeries
    }
}

/// One series: points, optional error bars as absolute `(lo, hi)` and an optional mask
/// of the points entering the fitted line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotTable {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub errors: Option<Vec<(f64, f64)>>,
    pub fit_mask: Option<Vec<bool>>,
}

impl PlotTable {
    pub fn new(title: &str, x_label: &str, y_label: &str, x: Vec<f64>, y: Vec<f64>) -> Self {
        PlotTable {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            x,
            y,
            errors: None,
            fit_mask: None,
        }
    }

    /// Symmetric bars of half-width `se`.
    pub fn with_se(mut self, se: &[f64]) -> Self {
        self.errors = Some(self.y.iter().zip(se).map(|(y, s)| (y - s, y + s)).collect());
        self
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.errors = Some(bounds);
        self
    }

    pub fn with_fit_mask(mut self, mask: Vec<bool>) -> Self {
        self.fit_mask = Some(mask);
        self
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-2..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(log: bool, values: impl Iterator<Item = f64>) -> Axis {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            let t = if log { v.log10() } else { v };
            if t.is_finite() {
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            let pad = if log { 0.5 } else { lo.abs().max(1.0) * 0.5 };
            lo -= pad;
            hi += pad;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Axis { log, lo, hi }
    }

    fn transform(&self, v: f64) -> f64 {
        if self.log {
            v.log10()
        } else {
            v
        }
    }

    /// Position in [0, 1]; values outside the range (or nonpositive on a log axis) clamp.
    fn unit(&self, v: f64) -> f64 {
        let t = self.transform(v);
        if t.is_nan() || t == f64::NEG_INFINITY {
            return 0.0;
        }
        ((t - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let decades: Vec<f64> = (self.lo.ceil() as i64..=self.hi.floor() as i64).map(|e| 10f64.powi(e as i32)).collect();
            if decades.len() >= 2 {
                return decades;
            }
            for mantissas in [&[1.0, 2.0, 5.0][..], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0][..]] {
                let nice: Vec<f64> = (self.lo.floor() as i64..=self.hi.ceil() as i64)
                    .flat_map(|e| mantissas.iter().map(move |m| m * 10f64.powi(e as i32)))
                    .filter(|v| (self.lo..=self.hi).contains(&v.log10()))
                    .collect();
                if nice.len() >= 2 {
                    return nice;
                }
            }
            return (0..=4).map(|k| 10f64.powf(self.lo + (self.hi - self.lo) * k as f64 / 4.0)).collect();
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last).map(|k| k as f64 * step).collect()
    }
}

/// Renders `table` as an SVG document.
pub fn emit_plot(table: &PlotTable, kind: PlotKind) -> String {
    let keep = |i: usize| {
        let (x, y) = (table.x[i], table.y[i]);
        x.is_finite() && y.is_finite() && (!kind.log_x() || x > 0.0) && (!kind.log_y() || y > 0.0)
    };
    let points: Vec<usize> = (0..table.x.len().min(table.y.len())).filter(|&i| keep(i)).collect();
    let err = |i: usize| table.errors.as_ref().and_then(|e| e.get(i)).copied();

    let xa = Axis::new(kind.log_x(), points.iter().map(|&i| table.x[i]));
    let ya = Axis::new(
        kind.log_y(),
        points
            .iter()
            .flat_map(|&i| [Some(table.y[i]), err(i).map(|e| e.0), err(i).map(|e| e.1)])
            .flatten(),
    );
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + pw * xa.unit(v);
    let py = |v: f64| TOP + ph * (1.0 - ya.unit(v));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(&table.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in xa.ticks() {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            label(t)
        );
    }
    for t in ya.ticks() {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            label(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0,
        escape(&table.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&table.y_label)
    );

    for &i in &points {
        let (x, y) = (px(table.x[i]), py(table.y[i]));
        if let Some((lo, hi)) = err(i) {
            if lo.is_finite() && hi.is_finite() {
                let (a, b) = (py(lo), py(hi));
                let _ = writeln!(
                    s,
                    r#"<path d="M{x:.2} {a:.2}V{b:.2}M{:.2} {a:.2}H{:.2}M{:.2} {b:.2}H{:.2}" stroke="steelblue"/>"#,
                    x - 3.0,
                    x + 3.0,
                    x - 3.0,
                    x + 3.0
                );
            }
        }
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="steelblue"/>"#);
    }

    let fitted: Vec<usize> = points
        .iter()
        .copied()
        .filter(|&i| table.fit_mask.as_ref().is_none_or(|m| m.get(i).copied().unwrap_or(false)))
        .collect();
    let xs: Vec<f64> = fitted.iter().map(|&i| xa.transform(table.x[i])).collect();
    let ys: Vec<f64> = fitted.iter().map(|&i| if kind.log_y() { table.y[i].ln() } else { table.y[i] }).collect();
    // on a log-log plot the slope is d ln y / d ln x, so fit on natural logs there
    let xs_fit: Vec<f64> = if kind.log_x() { fitted.iter().map(|&i| table.x[i].ln()).collect() } else { xs.clone() };
    if fitted.len() >= 2 {
        if let Some(fit) = LineFit::fit(&xs_fit, &ys) {
            let (x0, x1) = xs_fit.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let back_x = |v: f64| if kind.log_x() { v.exp() } else { v };
            let back_y = |v: f64| if kind.log_y() { v.exp() } else { v };
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-dasharray="6 4"/>"#,
                px(back_x(x0)),
                py(back_y(fit.predict(x0))),
                px(back_x(x1)),
                py(back_y(fit.predict(x1)))
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" fill="firebrick">slope={:.2}</text>"#,
                LEFT + 10.0,
                TOP + 18.0,
                fit.slope
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate_table(slope: f64) -> PlotTable {
        let x: Vec<f64> = [16.0, 32.0, 64.0, 128.0].to_vec();
        let y: Vec<f64> = x.iter().map(|n: &f64| 0.3 * n.powf(slope)).collect();
        let se: Vec<f64> = y.iter().map(|v| 0.1 * v).collect();
        PlotTable::new("rate", "N", "gap", x, y).with_se(&se)
    }

    #[test]
    fn annotates_slope() {
        let svg = emit_plot(&rate_table(-1.02), PlotKind::LogLog);
        assert!(svg.contains("slope=-1.02"), "{svg}");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn single_point_has_no_fit_line() {
        let t = PlotTable::new("one", "x", "y", vec![1.0], vec![2.0]);
        let svg = emit_plot(&t, PlotKind::LogLog);
        assert!(!svg.contains("slope="));
        assert!(svg.contains("<circle"));
    }

    #[test]
    fn bytes_are_deterministic() {
        let t = rate_table(-0.9);
        assert_eq!(emit_plot(&t, PlotKind::LogLinear), emit_plot(&t.clone(), PlotKind::LogLinear));
    }

    #[test]
    fn log_axes_skip_nonpositive() {
        let t = PlotTable::new("tail", "N r^2", "p", vec![0.0, 1.0, 2.0, 3.0], vec![0.5, 0.2, 0.0, 0.01]);
        let svg = emit_plot(&t, PlotKind::LogLinear);
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn mask_restricts_fit() {
        let t = PlotTable::new("t", "x", "y", vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 30.0]).with_fit_mask(vec![true, true, true, false]);
        assert!(emit_plot(&t, PlotKind::TimeSeries).contains("slope=1.00"));
    }

    #[test]
    fn escapes_labels() {
        let t = PlotTable::new("a<b & c", "x", "y", vec![1.0, 2.0], vec![1.0, 2.0]);
        assert!(emit_plot(&t, PlotKind::TimeSeries).contains("a&lt;b &amp; c"));
    }
}
