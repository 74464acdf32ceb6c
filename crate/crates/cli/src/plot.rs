//! Line charts of traces and rate-fidelity curves as standalone SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::output::{sha256_hex, Manifest, NumericCsv};
use crate::ExitKind;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Trace quantities drawn when present, all in bits.
const TRACE_SERIES: [&str; 6] = ["G", "R", "R_dprime", "Q", "F", "kl_x"];

struct Series {
    name: String,
    ys: Vec<f64>,
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn line_chart(title: &str, xlabel: &str, xs: &[f64], series: &[Series]) -> Result<String> {
    let Some((x0, x1)) = range(xs.iter().copied()) else { bail!("{title}: no finite x values") };
    let Some((y0, y1)) = range(series.iter().flat_map(|s| s.ys.iter().copied())) else {
        bail!("{title}: no finite y values")
    };
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#)?;
    writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    )?;
    writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#)?;
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, px(x), TOP + ph + 16.0, tick(x))?;
        writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py(y) + 4.0, tick(y))?;
        writeln!(svg, r##"<line x1="{:.2}" y1="{TOP}" x2="{:.2}" y2="{}" stroke="#ddd"/>"##, px(x), px(x), TOP + ph)?;
    }
    writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(xlabel)
    )?;
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(&s.ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "))?;
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0)?;
        writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.name))?;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.2e}")
    } else {
        format!("{:.4}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn trace_plot(path: &Path, name: &str) -> Result<String> {
    let csv = NumericCsv::read(path)?;
    if csv.rows.is_empty() {
        bail!("{name}: empty trace");
    }
    let xcol = ["step", "sweep"].into_iter().find(|c| csv.col(c).is_some());
    let Some(xcol) = xcol else { bail!("{name}: missing step column") };
    let series: Vec<Series> =
        TRACE_SERIES.iter().filter_map(|c| csv.column(c).map(|ys| Series { name: c.to_string(), ys })).collect();
    if series.is_empty() {
        bail!("{name}: missing columns, need one of {}", TRACE_SERIES.join(","));
    }
    line_chart(&format!("{name} (bits)"), xcol, &csv.column(xcol).unwrap(), &series)
}

fn curve_plot(path: &Path, name: &str) -> Result<String> {
    let csv = NumericCsv::read(path)?;
    if csv.rows.is_empty() {
        bail!("{name}: empty curve");
    }
    let (Some(g), Some(r)) = (csv.column("G"), csv.column("R")) else { bail!("{name}: missing columns G,R") };
    line_chart("R(G) (bits)", "G", &g, &[Series { name: "R".into(), ys: r }])
}

/// SVG name and contents for each plottable CSV among `names` in `root`.
pub fn render_plots(root: &Path, names: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for name in names {
        let Some(stem) = name.strip_suffix(".csv") else { continue };
        let path = root.join(name);
        let svg = if stem.starts_with("trace") {
            trace_plot(&path, name)?
        } else if stem == "curve" {
            curve_plot(&path, name)?
        } else {
            continue;
        };
        out.push((format!("{stem}.svg"), svg));
    }
    Ok(out)
}

/// Renders the plots of an existing run directory and records them in its manifest.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut manifest = Manifest::read(run_dir)?;
    let names: Vec<String> = manifest.files.keys().cloned().collect();
    let plots = render_plots(run_dir, &names)?;
    let mut paths = Vec::new();
    for (name, svg) in plots {
        let path = run_dir.join(&name);
        std::fs::write(&path, &svg).with_context(|| format!("writing {}", path.display())).context(ExitKind::Io)?;
        manifest.files.insert(name, sha256_hex(svg.as_bytes()));
        paths.push(path);
    }
    manifest.write(run_dir)?;
    Ok(paths)
}
