//! Minimal self-contained SVG line charts.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Optional `(lower, upper)` per point, drawn as a shaded band.
    pub band: Option<Vec<(f64, f64)>>,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter_map(|v| transform(v, log)) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * lo.abs().max(1.0) {
            lo -= 0.5;
            hi += 0.5;
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self {
            log,
            lo,
            hi,
            px_lo,
            px_hi,
        }
    }

    fn px(&self, v: f64) -> Option<f64> {
        transform(v, self.log)
            .map(|t| self.px_lo + (t - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo))
    }

    /// Tick positions in data units with their labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo as i32, self.hi as i32);
            let step = ((b - a) / 8).max(1);
            (a..=b)
                .step_by(step as usize)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            let raw = (self.hi - self.lo) / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0]
                .iter()
                .map(|m| m * mag)
                .find(|s| *s >= raw)
                .unwrap_or(10.0 * mag);
            let mut t = (self.lo / step).ceil() * step;
            let mut out = Vec::new();
            while t <= self.hi + 1e-9 * step {
                out.push((t, format_tick(t, step)));
                t += step;
            }
            out
        }
    }
}

fn transform(v: f64, log: bool) -> Option<f64> {
    if !v.is_finite() {
        return None;
    }
    if log {
        (v > 0.0).then(|| v.log10())
    } else {
        Some(v)
    }
}

fn format_tick(v: f64, step: f64) -> String {
    if step >= 1.0 && v.abs() < 1e7 {
        format!("{}", v.round())
    } else if v.abs() >= 1e-3 && v.abs() < 1e7 {
        let digits = (-step.log10().floor()).max(0.0) as usize;
        format!("{v:.digits$}")
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Chart {
    pub fn render(&self) -> String {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0));
        let x = Axis::fit(xs, self.log_x, LEFT, WIDTH - RIGHT);
        let ys = self.series.iter().flat_map(|s| {
            s.points.iter().map(|p| p.1).chain(
                s.band
                    .iter()
                    .flat_map(|b| b.iter().flat_map(|&(lo, hi)| [lo, hi])),
            )
        });
        let y = Axis::fit(ys, self.log_y, HEIGHT - BOTTOM, TOP);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(&self.title)
        );
        // frame and grid
        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            WIDTH - RIGHT - LEFT,
            HEIGHT - BOTTOM - TOP
        );
        for (v, label) in x.ticks() {
            if let Some(px) = x.px(v) {
                let _ = writeln!(
                    svg,
                    r##"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{}" stroke="#ddd"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
                    HEIGHT - BOTTOM,
                    HEIGHT - BOTTOM + 16.0,
                    escape(&label)
                );
            }
        }
        for (v, label) in y.ticks() {
            if let Some(py) = y.px(v) {
                let _ = writeln!(
                    svg,
                    r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                    WIDTH - RIGHT,
                    LEFT - 6.0,
                    py + 4.0,
                    escape(&label)
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            HEIGHT - 18.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            (TOP + HEIGHT - BOTTOM) / 2.0,
            escape(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if let Some(band) = &s.band {
                let upper: Vec<(f64, f64)> = s
                    .points
                    .iter()
                    .zip(band)
                    .filter_map(|(p, b)| Some((x.px(p.0)?, y.px(b.1)?)))
                    .collect();
                let lower: Vec<(f64, f64)> = s
                    .points
                    .iter()
                    .zip(band)
                    .filter_map(|(p, b)| Some((x.px(p.0)?, y.px(b.0)?)))
                    .collect();
                if upper.len() > 1 && lower.len() > 1 {
                    let pts: Vec<String> = upper
                        .iter()
                        .chain(lower.iter().rev())
                        .map(|(a, b)| format!("{a:.2},{b:.2}"))
                        .collect();
                    let _ = writeln!(
                        svg,
                        r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                        pts.join(" ")
                    );
                }
            }
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter_map(|&(a, b)| Some((x.px(a)?, y.px(b)?)))
                .collect();
            let dash = if s.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            match pts.as_slice() {
                [] => {}
                [(cx, cy)] => {
                    let _ = writeln!(
                        svg,
                        r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{color}"/>"#
                    );
                }
                _ => {
                    let joined: Vec<String> =
                        pts.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
                    let _ = writeln!(
                        svg,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#,
                        joined.join(" ")
                    );
                }
            }
            let ly = TOP + 10.0 + 20.0 * i as f64;
            let lx = WIDTH - RIGHT + 14.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
                lx + 22.0,
                lx + 28.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

type Points = Vec<(f64, f64)>;

/// Mean and sample standard deviation across runs at each shared abscissa.
/// Runs shorter than the longest one contribute their last value.
pub fn mean_band(runs: &[Points]) -> (Points, Points) {
    let Some(longest) = runs.iter().max_by_key(|r| r.len()) else {
        return (Vec::new(), Vec::new());
    };
    let mut means = Vec::with_capacity(longest.len());
    let mut band = Vec::with_capacity(longest.len());
    for (idx, &(xv, _)) in longest.iter().enumerate() {
        let vals: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.get(idx.min(r.len().saturating_sub(1))).map(|p| p.1))
            .collect();
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        means.push((xv, mean));
        band.push((mean - sd, mean + sd));
    }
    (means, band)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_self_contained_svg() {
        let chart = Chart {
            title: "a < b".into(),
            x_label: "iteration".into(),
            y_label: "value".into(),
            log_y: true,
            series: vec![Series {
                label: "m=1000".into(),
                points: vec![(0.0, 1.0), (10.0, 0.1), (20.0, 0.0)],
                band: Some(vec![(0.5, 1.5), (0.05, 0.2), (0.0, 0.0)]),
                dashed: false,
            }],
            ..Chart::default()
        };
        let svg = chart.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("<polygon"));
        assert!(!svg.contains("href"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn band_carries_short_runs_forward() {
        let runs = vec![vec![(0.0, 1.0), (1.0, 3.0)], vec![(0.0, 3.0)]];
        let (m, b) = mean_band(&runs);
        assert_eq!(m, vec![(0.0, 2.0), (1.0, 3.0)]);
        assert!((b[0].1 - (2.0 + 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(b[1], (3.0, 3.0));
    }
}
