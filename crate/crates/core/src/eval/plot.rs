//! Minimal SVG bar charts for evaluation reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::EvalReport;
use crate::error::{Error, Result};

const W: f64 = 720.0;
const H: f64 = 360.0;
const LEFT: f64 = 60.0;
const BOTTOM: f64 = 110.0;
const TOP: f64 = 40.0;
const COLORS: [&str; 3] = ["#4c72b0", "#dd8452", "#55a868"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars: one group per label, one bar per series. Missing values
/// leave a gap. Values are drawn on a fixed `[lo, hi]` axis.
pub fn bar_chart_svg(
    title: &str,
    labels: &[String],
    series: &[(&str, Vec<Option<f64>>)],
    (lo, hi): (f64, f64),
) -> String {
    let plot_h = H - TOP - BOTTOM;
    let plot_w = W - LEFT - 20.0;
    let y_of = |v: f64| TOP + plot_h * (1.0 - ((v - lo) / (hi - lo)).clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, esc(title));
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let zero = y_of(0.0_f64.clamp(lo, hi));
    let group = plot_w / labels.len().max(1) as f64;
    let bar = group * 0.8 / series.len().max(1) as f64;
    for (g, label) in labels.iter().enumerate() {
        let x0 = LEFT + g as f64 * group + group * 0.1;
        for (k, (_, vals)) in series.iter().enumerate() {
            if let Some(v) = vals.get(g).copied().flatten() {
                let y = y_of(v);
                let (top, h) = if y < zero { (y, zero - y) } else { (zero, y - zero) };
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                    x0 + k as f64 * bar,
                    bar * 0.95,
                    COLORS[k % COLORS.len()]
                );
            }
        }
        let cx = x0 + group * 0.4;
        let ly = H - BOTTOM + 14.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-35 {cx:.1} {ly:.1})">{}</text>"#,
            esc(label)
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let x = LEFT + 10.0 + k as f64 * 140.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            H - 18.0,
            COLORS[k % COLORS.len()],
            x + 14.0,
            H - 9.0,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `pcc.svg` and `conversion_rate.svg` into `dir`.
pub fn write_plots(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels: Vec<String> = report.pcc_table.keys().cloned().collect();
    let pcc = bar_chart_svg(
        "log-F0 correlation",
        &labels,
        &[
            ("vs source", labels.iter().map(|l| report.pcc_table[l].vs_source).collect()),
            ("vs target", labels.iter().map(|l| report.pcc_table[l].vs_target).collect()),
        ],
        (-1.0, 1.0),
    );
    let rl: Vec<String> = report.conversion_rate.keys().cloned().collect();
    let rates = bar_chart_svg(
        "objective conversion rate",
        &rl,
        &[(
            "rate",
            rl.iter().map(|l| report.conversion_rate[l].map(|r| r.rate)).collect(),
        )],
        (0.0, 1.0),
    );
    let mut out = Vec::new();
    for (name, body) in [("pcc.svg", pcc), ("conversion_rate.svg", rates)] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}
