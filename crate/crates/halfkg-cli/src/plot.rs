use crate::report::{read_csv, write_atomic, PlotSpec, Summary};
use anyhow::{bail, Context, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// `report` is a summary.json or the directory holding one.
pub fn load_summary(report: &Path) -> Result<(Summary, PathBuf)> {
    let file = if report.is_dir() { report.join("summary.json") } else { report.to_path_buf() };
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    if text.trim().is_empty() {
        bail!("{}: empty report", file.display());
    }
    let summary: Summary = serde_json::from_str(&text).with_context(|| format!("{}: malformed report", file.display()))?;
    if summary.plots.is_empty() || summary.files.is_empty() {
        bail!("{}: report declares nothing to plot", file.display());
    }
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok((summary, dir))
}

/// Render every plot of a report into `out` (default: next to the report); returns the files written.
pub fn plot(report: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let (summary, dir) = load_summary(report)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dir.clone());
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    for (i, spec) in summary.plots.iter().enumerate() {
        let (table, svg) = match spec {
            PlotSpec::LogLog { table, x, y, reference_slope } => (table, series_svg(&dir, table, x, y, true, *reference_slope)?),
            PlotSpec::Line { table, x, y } => (table, series_svg(&dir, table, x, y, false, None)?),
            PlotSpec::Bars { table, label, y, log } => (table, bars_svg(&dir, table, label, y, *log)?),
        };
        let path = out.join(format!("{}_{i}_{table}.svg", summary.experiment));
        write_atomic(&path, svg.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

fn load_table(dir: &Path, table: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = dir.join(format!("{table}.csv"));
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let (cols, rows) = read_csv(&text).with_context(|| format!("{}", path.display()))?;
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok((cols, rows))
}

fn column(cols: &[String], name: &str, table: &str) -> Result<usize> {
    cols.iter().position(|c| c == name).with_context(|| format!("{table}.csv has no column {name}"))
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(vals: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in vals {
            let v = if log { v.log10() } else { v };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Axis { lo: lo - pad, hi: hi + pad, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        (0..=4)
            .map(|i| {
                let u = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                let label = if self.log { format!("1e{u:.1}") } else { format!("{u:.3}") };
                (i as f64 / 4.0, label)
            })
            .collect()
    }
}

fn px(ax: &Axis, v: f64) -> f64 {
    LEFT + ax.frac(v) * (W - LEFT - RIGHT)
}

fn py(ay: &Axis, v: f64) -> f64 {
    H - BOTTOM - ay.frac(v) * (H - TOP - BOTTOM)
}

fn frame(svg: &mut String, title: &str, xlabel: &str, ylabel: &str, ax: Option<&Axis>, ay: &Axis) {
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(svg, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    if let Some(ax) = ax {
        for (f, l) in ax.ticks() {
            let x = x0 + f * (x1 - x0);
            let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{l}</text>"#, y1 + 5.0, y1 + 18.0);
        }
    }
    for (f, l) in ay.ticks() {
        let y = y1 - f * (y1 - y0);
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{l}</text>"#, x0 - 5.0, x0 - 8.0, y + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, esc(xlabel));
    let _ = writeln!(svg, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0, esc(ylabel));
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(svg: &mut String, pts: &[(f64, f64)], color: &str, dash: bool) {
    if pts.is_empty() {
        return;
    }
    let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let d = if dash { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{d}/>"#, p.join(" "));
}

fn legend(svg: &mut String, i: usize, text: &str, color: &str, dash: bool) {
    let (x, y) = (W - RIGHT - 170.0, TOP + 16.0 + 16.0 * i as f64);
    let d = if dash { r#" stroke-dasharray="6 4""# } else { "" };
    let _ = writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="1.5"{d}/><text x="{}" y="{}">{}</text>"#, x + 24.0, x + 30.0, y + 4.0, esc(text));
}

fn series_svg(dir: &Path, table: &str, x: &str, ys: &[String], log: bool, reference: Option<f64>) -> Result<String> {
    let (cols, rows) = load_table(dir, table)?;
    let xi = column(&cols, x, table)?;
    let yis: Vec<usize> = ys.iter().map(|y| column(&cols, y, table)).collect::<Result<_>>()?;
    let keep = |r: &&Vec<f64>| !log || (r[xi] > 0.0 && yis.iter().all(|&j| r[j] > 0.0));
    let rows: Vec<&Vec<f64>> = rows.iter().filter(keep).collect();
    if rows.is_empty() {
        bail!("{table}.csv has no plottable rows");
    }
    let ax = Axis::fit(rows.iter().map(|r| r[xi]), log);
    let ay = Axis::fit(rows.iter().flat_map(|r| yis.iter().map(move |&j| r[j])), log);
    let mut svg = String::new();
    let title = if log { format!("{table} (log-log)") } else { table.to_string() };
    frame(&mut svg, &title, x, &ys.join(", "), Some(&ax), &ay);
    for (k, &j) in yis.iter().enumerate() {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (px(&ax, r[xi]), py(&ay, r[j]))).collect();
        let color = COLORS[k % COLORS.len()];
        polyline(&mut svg, &pts, color, false);
        legend(&mut svg, k, &ys[k], color, false);
    }
    if let (Some(slope), true) = (reference, log) {
        let (x0, y0) = (rows[0][xi], rows[0][yis[0]]);
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r[xi], y0 * (r[xi] / x0).powf(slope)))
            .filter(|(_, y)| {
                let f = ay.frac(*y);
                (0.0..=1.0).contains(&f)
            })
            .map(|(xv, yv)| (px(&ax, xv), py(&ay, yv)))
            .collect();
        polyline(&mut svg, &pts, "#555555", true);
        legend(&mut svg, yis.len(), &format!("reference slope {slope}"), "#555555", true);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bars_svg(dir: &Path, table: &str, label: &str, y: &str, log: bool) -> Result<String> {
    let (cols, rows) = load_table(dir, table)?;
    let li = column(&cols, label, table)?;
    let yi = column(&cols, y, table)?;
    let smallest = rows.iter().map(|r| r[yi]).filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if !log { 0.0 } else if smallest.is_finite() { smallest } else { 1e-300 };
    let val = |v: f64| if log { v.max(floor) } else { v };
    let ay = Axis::fit(rows.iter().map(|r| val(r[yi])).chain(if log { None } else { Some(0.0) }), log);
    let mut svg = String::new();
    frame(&mut svg, table, label, y, None, &ay);
    let n = rows.len() as f64;
    let slot = (W - LEFT - RIGHT) / n;
    let base = if log { H - BOTTOM } else { py(&ay, 0.0) };
    for (i, r) in rows.iter().enumerate() {
        let top = py(&ay, val(r[yi]));
        let x = LEFT + slot * (i as f64 + 0.15);
        let (y0, h) = if top < base { (top, base - top) } else { (base, top - base) };
        let _ = writeln!(svg, r#"<rect x="{x:.2}" y="{y0:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#, slot * 0.7, COLORS[0]);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, x + slot * 0.35, H - BOTTOM + 18.0, r[li]);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
