//! Report output: a plain-text table, JSON, and SVG figures.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::report::LatencyReport;
use super::stats::StageStats;
use super::ttest::TestResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Text,
    Json,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "text" | "txt" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(format!("unknown report format {other:?} (text, json, svg)")),
        }
    }
}

fn stars(r: &TestResult) -> &'static str {
    match r.p_value {
        p if p < 0.001 => "***",
        p if p < 0.01 => "**",
        p if p < 0.05 => "*",
        _ => "n.s.",
    }
}

fn mean_sd(s: &StageStats) -> String {
    format!("{:.2} ± {:.2}", s.mean, s.sd)
}

fn median_iqr(s: &StageStats) -> String {
    format!("{:.2} [{:.2}, {:.2}]", s.median, s.q25, s.q75)
}

fn t_cell(r: &TestResult) -> String {
    match r.statistic {
        Some(t) => format!(
            "{} ms: Δ = {:.2}, t = {:.2}, p {} {}",
            r.target_ms,
            r.delta_ms,
            t,
            if r.p_below_floor { r.p_display() } else { format!("= {}", r.p_display()) },
            stars(r)
        ),
        None => format!("{} ms: Δ = {:.2}, degenerate, p = {}", r.target_ms, r.delta_ms, r.p_display()),
    }
}

/// Fixed-layout table of stage descriptors followed by the test summary.
pub fn render_text(report: &LatencyReport) -> String {
    let mut out = String::new();
    let e2e = &report.stages.end_to_end;
    let _ = writeln!(
        out,
        "Latency descriptors per pipeline stage (n = {}; all times in ms)",
        e2e.n
    );
    let clocks = report
        .clocks
        .map(|c| format!("publisher {}, sink {}", c.publisher, c.sink))
        .unwrap_or_else(|| "unknown".into());
    let _ = writeln!(
        out,
        "network measured from t_{}; clocks: {clocks}",
        report.config.network_from
    );
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<11} {:<18} {:<24} {:>8}  t-test vs target",
        "Stage", "Mean ± SD", "Median [IQR]", "P95"
    );
    let _ = writeln!(out, "{}", "-".repeat(11 + 1 + 18 + 1 + 24 + 1 + 8 + 2 + 16));
    for (name, s) in report.stages.rows() {
        let first_test = if name == "End-to-end" {
            report.t_tests.first().map(t_cell).unwrap_or_else(|| "-".into())
        } else {
            "-".into()
        };
        let _ = writeln!(
            out,
            "{:<11} {:<18} {:<24} {:>8.2}  {}",
            name,
            mean_sd(s),
            median_iqr(s),
            s.p95,
            first_test
        );
    }
    for t in report.t_tests.iter().skip(1) {
        let _ = writeln!(out, "{:<74}{}", "", t_cell(t));
    }
    out.push('\n');

    let m = &report.merge;
    let _ = writeln!(
        out,
        "Merge: {} published, {} received, {} records, {} dropped",
        m.publish_entries,
        m.sink_entries,
        m.records,
        m.drops()
    );
    let w = &report.wilcoxon;
    let z = w.z.map(|z| format!(", z = {z:.2}")).unwrap_or_default();
    let _ = writeln!(
        out,
        "Wilcoxon signed-rank vs {} ms (one-sided, less): W+ = {:.1}{z}, p {} {} [{}]",
        w.target_ms,
        w.statistic.unwrap_or(f64::NAN),
        if w.p_below_floor { w.p_display() } else { format!("= {}", w.p_display()) },
        stars(w),
        match w.method {
            super::ttest::PMethod::Exact => "exact",
            _ => "normal approximation",
        }
    );
    let ci = &report.median_ci;
    let _ = writeln!(
        out,
        "Median end-to-end {:.2} ms, {:.0}% bootstrap CI [{:.2}, {:.2}] ({} resamples, seed {})",
        e2e.median,
        ci.confidence * 100.0,
        ci.lo,
        ci.hi,
        ci.resamples,
        ci.seed
    );
    for t in &report.thresholds {
        let _ = writeln!(out, "Within {} ms: {:.2}%", t.threshold_ms, t.fraction * 100.0);
    }
    let h = &report.histogram;
    let _ = writeln!(
        out,
        "Histogram: {} ms bins from {} to {} ms, {} beyond ({:.2}%)",
        h.bin_width,
        h.origin,
        h.truncate_at,
        h.overflow,
        h.overflow as f64 / h.total().max(1) as f64 * 100.0
    );
    out
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    svg: String,
}

fn nice_step(span: f64, target_ticks: f64) -> f64 {
    let raw = span / target_ticks;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    step * mag
}

impl Frame {
    fn new(title: &str, x: (f64, f64), y: (f64, f64), x_label: &str, y_label: &str) -> Self {
        let mut f = Frame {
            x0: x.0,
            x1: if x.1 > x.0 { x.1 } else { x.0 + 1.0 },
            y0: y.0,
            y1: if y.1 > y.0 { y.1 } else { y.0 + 1.0 },
            svg: String::new(),
        };
        let _ = writeln!(
            f.svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(f.svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            f.svg,
            r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
            W / 2.0,
            esc(title)
        );
        let (px0, px1, py0, py1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
        let _ = writeln!(
            f.svg,
            r#"<rect x="{px0}" y="{py1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            px1 - px0,
            py0 - py1
        );
        let xs = nice_step(f.x1 - f.x0, 8.0);
        let mut t = (f.x0 / xs).ceil() * xs;
        while t <= f.x1 + 1e-9 {
            let px = f.px(t);
            let _ = writeln!(
                f.svg,
                r#"<line x1="{px:.2}" y1="{py0}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
                py0 + 4.0,
                py0 + 16.0,
                tick_label(t)
            );
            t += xs;
        }
        let ys = nice_step(f.y1 - f.y0, 6.0);
        let mut t = (f.y0 / ys).ceil() * ys;
        while t <= f.y1 + 1e-9 {
            let py = f.py(t);
            let _ = writeln!(
                f.svg,
                r#"<line x1="{}" y1="{py:.2}" x2="{px0}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                px0 - 4.0,
                px0 - 6.0,
                py + 4.0,
                tick_label(t)
            );
            t += ys;
        }
        let _ = writeln!(
            f.svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (px0 + px1) / 2.0,
            H - 12.0,
            esc(x_label)
        );
        let _ = writeln!(
            f.svg,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            (py0 + py1) / 2.0,
            (py0 + py1) / 2.0,
            esc(y_label)
        );
        f
    }

    fn px(&self, x: f64) -> f64 {
        let x = x.clamp(self.x0, self.x1);
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let y = y.clamp(self.y0, self.y1);
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn vline(&mut self, x: f64, color: &str, dash: bool, label: &str) {
        let px = self.px(x);
        let dash = if dash { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            self.svg,
            r#"<line x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{}" stroke="{color}"{dash}/><text x="{:.2}" y="{}" fill="{color}">{}</text>"#,
            H - BOTTOM,
            px + 3.0,
            TOP + 12.0,
            esc(label)
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// ECDF of end-to-end latency with threshold bands, the median CI and P95.
pub fn render_ecdf_svg(report: &LatencyReport) -> String {
    let e2e = &report.stages.end_to_end;
    let x_min = e2e.min.min(0.0);
    let x_max = e2e.max.min(e2e.p95 * 4.0).max(110.0);
    let mut f = Frame::new(
        "End-to-end latency ECDF",
        (x_min, x_max),
        (0.0, 1.0),
        "end-to-end latency (ms)",
        "cumulative fraction",
    );
    for (from, color) in [(50.0, "#fff3cd"), (100.0, "#f8d7da")] {
        if from < x_max {
            let (a, b) = (f.px(from), f.px(x_max));
            let _ = writeln!(
                f.svg,
                r#"<rect x="{a:.2}" y="{TOP}" width="{:.2}" height="{}" fill="{color}" opacity="0.7"/>"#,
                b - a,
                H - TOP - BOTTOM
            );
        }
    }
    let ci = &report.median_ci;
    let (a, b) = (f.px(ci.lo), f.px(ci.hi));
    let _ = writeln!(
        f.svg,
        r##"<rect x="{a:.2}" y="{TOP}" width="{:.2}" height="{}" fill="#9ec5fe" opacity="0.6"/>"##,
        (b - a).max(1.0),
        H - TOP - BOTTOM
    );

    let mut path = String::new();
    let mut prev_y = 0.0;
    let _ = write!(path, "M{:.2},{:.2}", f.px(x_min), f.py(0.0));
    // thin to at most ~2000 steps for large runs
    let stride = (report.ecdf.len() / 2000).max(1);
    let last = report.ecdf.len().saturating_sub(1);
    for (i, p) in report.ecdf.iter().enumerate() {
        if i % stride != 0 && i != last {
            continue;
        }
        let x = f.px(p.value);
        let _ = write!(path, " L{x:.2},{:.2} L{x:.2},{:.2}", f.py(prev_y), f.py(p.fraction));
        prev_y = p.fraction;
    }
    let _ = write!(path, " L{:.2},{:.2}", f.px(x_max), f.py(prev_y));
    let _ = writeln!(f.svg, r##"<path d="{path}" fill="none" stroke="#0d6efd" stroke-width="1.5"/>"##);
    f.vline(e2e.p95, "#6f42c1", true, &format!("P95 {:.1}", e2e.p95));
    f.vline(e2e.median, "#0a58ca", false, &format!("median {:.2}", e2e.median));
    f.finish()
}

/// Per-stage box plots; whiskers at the 1.5×IQR fences clipped to the data range.
pub fn render_boxplot_svg(report: &LatencyReport) -> String {
    let rows = report.stages.rows();
    let whisk = |s: &StageStats| {
        let iqr = s.q75 - s.q25;
        ((s.q25 - 1.5 * iqr).max(s.min), (s.q75 + 1.5 * iqr).min(s.max))
    };
    let y_min = rows.iter().map(|(_, s)| whisk(s).0).fold(0.0, f64::min);
    let y_max = rows.iter().map(|(_, s)| whisk(s).1.max(s.p95)).fold(1.0, f64::max) * 1.05;
    let mut f = Frame::new(
        "Latency by pipeline stage",
        (0.0, rows.len() as f64),
        (y_min, y_max),
        "stage",
        "latency (ms)",
    );
    for (i, (name, s)) in rows.iter().enumerate() {
        let cx = f.px(i as f64 + 0.5);
        let half = (f.px(1.0) - f.px(0.0)) * 0.25;
        let (lo, hi) = whisk(s);
        let _ = writeln!(
            f.svg,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            f.py(lo),
            f.py(hi)
        );
        for w in [lo, hi] {
            let _ = writeln!(
                f.svg,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#,
                cx - half / 2.0,
                cx + half / 2.0,
                y = f.py(w)
            );
        }
        let (top, bottom) = (f.py(s.q75), f.py(s.q25));
        let _ = writeln!(
            f.svg,
            r##"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#cfe2ff" stroke="black"/>"##,
            cx - half,
            2.0 * half,
            (bottom - top).max(1.0)
        );
        let _ = writeln!(
            f.svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dc3545" stroke-width="2"/>"##,
            cx - half,
            cx + half,
            y = f.py(s.median)
        );
        let _ = writeln!(
            f.svg,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 30.0,
            esc(name)
        );
        if s.max > hi {
            let _ = writeln!(
                f.svg,
                r#"<text x="{cx:.2}" y="{}" text-anchor="middle" font-size="9">max {:.1}</text>"#,
                TOP + 10.0,
                s.max
            );
        }
    }
    f.finish()
}

/// Truncated end-to-end histogram with a marker at 30 ms.
pub fn render_histogram_svg(report: &LatencyReport) -> String {
    let h = &report.histogram;
    let peak = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut f = Frame::new(
        "End-to-end latency histogram",
        (h.origin, h.truncate_at),
        (0.0, peak * 1.05),
        "end-to-end latency (ms)",
        "packets",
    );
    for (k, &c) in h.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (a, b) = (f.px(h.bin_left(k)), f.px(h.bin_left(k + 1)));
        let (top, base) = (f.py(c as f64), f.py(0.0));
        let _ = writeln!(
            f.svg,
            r##"<rect x="{a:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#6ea8fe" stroke="white" stroke-width="0.5"/>"##,
            (b - a).max(0.5),
            base - top
        );
    }
    f.vline(30.0, "#dc3545", true, "30 ms");
    let _ = writeln!(
        f.svg,
        r#"<text x="{}" y="{}" text-anchor="end">{} beyond {} ms</text>"#,
        W - RIGHT - 4.0,
        TOP + 12.0,
        h.overflow,
        h.truncate_at
    );
    f.finish()
}

/// Writes the requested formats into `dir` and returns the created paths.
pub fn write_report(report: &LatencyReport, dir: &Path, formats: &[ReportFormat]) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    for fmt in formats {
        match fmt {
            ReportFormat::Text => put("report.txt", render_text(report))?,
            ReportFormat::Json => put("report.json", report.to_json())?,
            ReportFormat::Svg => {
                put("ecdf.svg", render_ecdf_svg(report))?;
                put("stages_boxplot.svg", render_boxplot_svg(report))?;
                put("histogram.svg", render_histogram_svg(report))?;
            }
        }
    }
    Ok(written)
}
