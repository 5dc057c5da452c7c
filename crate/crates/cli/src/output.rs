//! File emitters: CSV tables, single-series SVG line plots, and the JSON
//! run report.  Every float goes through `fmt_f64`, which prints 17
//! significant digits, so identical runs produce byte-identical tables.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::CliError;

/// 17 significant digits; enough for f64 round-trip, fixed width for
/// byte-level determinism checks.  Non-finite values print as lowercase
/// words, the form most CSV readers accept.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// RFC 4180 with LF line endings.  Fields are quoted only when they contain
/// a comma, quote, or line break, which numeric tables never do.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new() -> Self {
        Csv { buf: String::new() }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for field in fields {
            if !first {
                self.buf.push(',');
            }
            first = false;
            let f = field.as_ref();
            if f.contains([',', '"', '\n', '\r']) {
                self.buf.push('"');
                self.buf.push_str(&f.replace('"', "\"\""));
                self.buf.push('"');
            } else {
                self.buf.push_str(f);
            }
        }
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

#[derive(Serialize)]
pub struct RunReport<'a> {
    pub version: &'static str,
    pub command: &'static str,
    /// Placeholder: nothing in the pipeline is randomized.
    pub seed: u64,
    pub wall_time_s: f64,
    pub status: &'a str,
    pub config: &'a ScenarioConfig,
    pub results: serde_json::Value,
}

pub fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), content).map_err(CliError::Io)
}

pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Config(format!("serializing report: {e}")))?;
    text.push('\n');
    write_file(dir, "report.json", &text)
}

const PLOT_W: f64 = 720.0;
const PLOT_H: f64 = 480.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 56.0;

/// Minimal single-series line plot: axes, four ticks per axis, a polyline,
/// and a dot per sample.  Log axes plot log10 of the data; nonpositive or
/// non-finite samples are dropped rather than breaking the scale.
pub fn line_plot(
    points: &[(f64, f64)],
    log_x: bool,
    log_y: bool,
    x_label: &str,
    y_label: &str,
) -> String {
    let t = |v: f64, log: bool| if log { v.log10() } else { v };
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| {
            x.is_finite() && y.is_finite() && (!log_x || *x > 0.0) && (!log_y || *y > 0.0)
        })
        .map(|&(x, y)| (t(x, log_x), t(y, log_y)))
        .collect();
    let range = |vals: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in vals {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            (0.0, 1.0)
        } else if lo == hi {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x_lo, x_hi) = range(&mut usable.iter().map(|p| p.0));
    let (y_lo, y_hi) = range(&mut usable.iter().map(|p| p.1));
    let inner_w = PLOT_W - MARGIN_L - MARGIN_R;
    let inner_h = PLOT_H - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * inner_w;
    let py = |y: f64| MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * inner_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes.
    let (x0, y0) = (MARGIN_L, MARGIN_T + inner_h);
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{:.2}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        MARGIN_L + inner_w
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{MARGIN_T}\" stroke=\"black\"/>\n"
    ));
    // Ticks with labels in data units (log axes label 10^t).
    let label = |t: f64, log: bool| -> String {
        let v = if log { 10f64.powf(t) } else { t };
        format!("{v:.3e}")
    };
    for k in 0..4 {
        let frac = k as f64 / 3.0;
        let tx = x_lo + frac * (x_hi - x_lo);
        let sx = px(tx);
        svg.push_str(&format!(
            "<line x1=\"{sx:.2}\" y1=\"{y0}\" x2=\"{sx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{sx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 20.0,
            label(tx, log_x)
        ));
        let ty = y_lo + frac * (y_hi - y_lo);
        let sy = py(ty);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{sy:.2}\" x2=\"{x0}\" y2=\"{sy:.2}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            sy + 4.0,
            label(ty, log_y)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + inner_w / 2.0,
        PLOT_H - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
        8.0,
        MARGIN_T - 10.0,
        escape(y_label)
    ));
    if usable.len() > 1 {
        let pts: Vec<String> = usable
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
    }
    for &(x, y) in &usable {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"steelblue\"/>\n",
            px(x),
            py(y)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
