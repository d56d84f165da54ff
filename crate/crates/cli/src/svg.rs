//! Deterministic SVG line charts, rendered as plain text with no display
//! dependency. Coordinates are formatted to fixed precision and every input
//! is processed in order, so identical data produces identical bytes.
//!
//! Log axes take base-10 decade ticks; points at or below [`LOG_FLOOR`] are
//! clamped there so exact zeros (a vanished residual, an inviscid
//! dissipation) stay plottable, and callers say so in the axis label.

use std::fmt::Write as _;

/// Smallest magnitude a log axis distinguishes.
pub const LOG_FLOOR: f64 = 1e-18;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 690.0;
const TOP: f64 = 46.0;
const BOTTOM: f64 = 420.0;

const PALETTE: [&str; 8] = [
    "#3b6fb6", "#d9772b", "#4a9550", "#c24444", "#7a5aa8", "#8c6450", "#c76fa8", "#5b6672",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Marks entries excluded from verdicts; drawn as crosses instead of
    /// dots. Empty means none.
    pub flagged: Vec<bool>,
}

impl Series {
    pub fn plain(label: impl Into<String>, points: Vec<(f64, f64)>) -> Series {
        Series {
            label: label.into(),
            points,
            flagged: Vec::new(),
        }
    }
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct AxisScale {
    lo: f64,
    hi: f64,
    log: bool,
}

impl AxisScale {
    fn build(log: bool, values: impl Iterator<Item = f64>) -> AxisScale {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            let v = if log { v.abs().max(LOG_FLOOR).log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        AxisScale {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    fn place(&self, v: f64) -> f64 {
        let v = if self.log {
            v.abs().max(LOG_FLOOR).log10()
        } else {
            v
        };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions in data units (log axes report the exponent).
    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let first = self.lo.ceil() as i64;
            let last = self.hi.floor() as i64;
            let decades: Vec<f64> = (first..=last).map(|d| d as f64).collect();
            if decades.len() >= 2 {
                return decades;
            }
        }
        (0..=4)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / 4.0)
            .collect()
    }

    fn tick_label(&self, tick: f64) -> String {
        if self.log {
            format!("1e{}", format_num(tick))
        } else {
            format_num(tick)
        }
    }
}

/// Short deterministic number label: plain decimals in a human range,
/// exponent form outside it.
fn format_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    let text = if (1e-4..1e6).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    };
    text
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn render(&self) -> String {
        let xs = AxisScale::build(
            self.log_x,
            self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)),
        );
        let ys = AxisScale::build(
            self.log_y,
            self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)),
        );
        let px = |v: f64| LEFT + (RIGHT - LEFT) * xs.place(v);
        let py = |v: f64| BOTTOM - (BOTTOM - TOP) * ys.place(v);

        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">"
        );
        let _ = writeln!(
            out,
            "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
            (LEFT + RIGHT) / 2.0,
            esc(&self.title)
        );

        for tick in xs.ticks() {
            let data = if xs.log { 10f64.powf(tick) } else { tick };
            let x = px(data);
            let _ = writeln!(
                out,
                "<line x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" y2=\"{BOTTOM}\" \
                 stroke=\"#dddddd\" stroke-width=\"1\"/>"
            );
            let _ = writeln!(
                out,
                "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                BOTTOM + 18.0,
                xs.tick_label(tick)
            );
        }
        for tick in ys.ticks() {
            let data = if ys.log { 10f64.powf(tick) } else { tick };
            let y = py(data);
            let _ = writeln!(
                out,
                "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{RIGHT}\" y2=\"{y:.2}\" \
                 stroke=\"#dddddd\" stroke-width=\"1\"/>"
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
                LEFT - 8.0,
                y + 4.0,
                ys.tick_label(tick)
            );
        }
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" \
             stroke=\"#000000\" stroke-width=\"1.5\"/>"
        );
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" \
             stroke=\"#000000\" stroke-width=\"1.5\"/>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            (LEFT + RIGHT) / 2.0,
            BOTTOM + 40.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            "<text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\" \
             transform=\"rotate(-90 20 {:.2})\">{}</text>",
            (TOP + BOTTOM) / 2.0,
            (TOP + BOTTOM) / 2.0,
            esc(&self.y_label)
        );

        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            if series.points.len() > 1 {
                let mut path = String::new();
                for (x, y) in &series.points {
                    let _ = write!(path, "{:.2},{:.2} ", px(*x), py(*y));
                }
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                     stroke-width=\"1.8\"/>",
                    path.trim_end()
                );
            }
            for (i, (x, y)) in series.points.iter().enumerate() {
                let (cx, cy) = (px(*x), py(*y));
                if series.flagged.get(i).copied().unwrap_or(false) {
                    let _ = writeln!(
                        out,
                        "<path d=\"M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}\" \
                         stroke=\"{color}\" stroke-width=\"1.8\"/>",
                        cx - 4.0,
                        cy - 4.0,
                        cx + 4.0,
                        cy + 4.0,
                        cx - 4.0,
                        cy + 4.0,
                        cx + 4.0,
                        cy - 4.0
                    );
                } else {
                    let _ = writeln!(
                        out,
                        "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2.5\" fill=\"{color}\"/>"
                    );
                }
            }
        }

        let any_flagged = self
            .series
            .iter()
            .any(|s| s.flagged.iter().any(|&f| f));
        let mut row = 0;
        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let y = TOP + 14.0 + 16.0 * row as f64;
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
                RIGHT - 150.0,
                y - 9.0
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{y:.2}\">{}</text>",
                RIGHT - 136.0,
                esc(&series.label)
            );
            row += 1;
        }
        if any_flagged {
            let y = TOP + 14.0 + 16.0 * row as f64;
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{y:.2}\">x = under-resolved</text>",
                RIGHT - 150.0
            );
        }

        out.push_str("</svg>\n");
        out
    }
}
