//! Side-by-side comparison of two run directories.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::output::{Manifest, NumericCsv};
use crate::ExitKind;

/// Thresholds at which mixture traces report the first step below `kl_x`.
pub const KL_THRESHOLDS: [f64; 3] = [1e-3, 1e-4, 1e-5];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Faster {
    A,
    B,
    Tie,
}

/// Summary facts about one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFacts {
    pub name: String,
    pub converged: bool,
    /// Total solver iterations (sum over rows of the summary or table).
    pub iterations: usize,
    pub final_kl_x: Option<f64>,
    /// First trace step with `kl_x` below each of [`KL_THRESHOLDS`].
    pub steps_to_threshold: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
pub struct FileDiff {
    pub name: String,
    pub same_header: bool,
    pub rows: (usize, usize),
    /// Largest absolute difference over numeric cells of the shared rows.
    pub max_abs_diff: f64,
    /// Non-numeric cells that differ.
    pub text_mismatches: usize,
    /// Per-column largest absolute difference for G and R when present.
    pub g_delta: Option<f64>,
    pub r_delta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub kind: String,
    pub a: RunFacts,
    pub b: RunFacts,
    pub files: Vec<FileDiff>,
    /// Every shared output has the same checksum and neither run has extra outputs.
    pub identical: bool,
    pub faster: Faster,
}

impl CompareReport {
    pub fn max_abs_diff(&self) -> f64 {
        self.files.iter().map(|f| f.max_abs_diff).fold(0.0, f64::max)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.6e}"))
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind: {}", self.kind)?;
        for (tag, r) in [("A", &self.a), ("B", &self.b)] {
            write!(
                f,
                "{tag}: {} converged={} iterations={} final_kl_x={}",
                r.name,
                r.converged,
                r.iterations,
                opt(r.final_kl_x)
            )?;
            if !r.steps_to_threshold.is_empty() {
                let steps: Vec<String> = KL_THRESHOLDS
                    .iter()
                    .zip(&r.steps_to_threshold)
                    .map(|(t, s)| format!("{t:e}:{}", s.map_or("-".into(), |s| s.to_string())))
                    .collect();
                write!(f, " steps_to_kl[{}]", steps.join(" "))?;
            }
            writeln!(f)?;
        }
        for d in &self.files {
            write!(f, "{}: rows {}/{} max_abs_diff {:.6e}", d.name, d.rows.0, d.rows.1, d.max_abs_diff)?;
            if d.text_mismatches > 0 {
                write!(f, " text_mismatches {}", d.text_mismatches)?;
            }
            if !d.same_header {
                write!(f, " (headers differ)")?;
            }
            if d.g_delta.is_some() || d.r_delta.is_some() {
                write!(f, " dG {} dR {}", opt(d.g_delta), opt(d.r_delta))?;
            }
            writeln!(f)?;
        }
        writeln!(f, "identical: {}", self.identical)?;
        let verdict = match self.faster {
            Faster::A => format!("faster: A ({})", self.a.name),
            Faster::B => format!("faster: B ({})", self.b.name),
            Faster::Tie => "faster: tie".to_string(),
        };
        writeln!(f, "{verdict}")
    }
}

fn facts(dir: &Path, m: &Manifest) -> Result<RunFacts> {
    let summary_name = if m.kind == "control" { "table.csv" } else { "summary.csv" };
    let summary = NumericCsv::read(&dir.join(summary_name))?;
    let iterations = summary.column("iterations").unwrap_or_default().iter().map(|&v| v as usize).sum();
    let final_kl_x = summary.column("kl_x").and_then(|c| c.first().copied());
    let mut steps_to_threshold = Vec::new();
    if m.kind == "mixture" && m.files.contains_key("trace.csv") {
        let trace = NumericCsv::read(&dir.join("trace.csv"))?;
        if let (Some(step), Some(kl)) = (trace.column("step"), trace.column("kl_x")) {
            steps_to_threshold = KL_THRESHOLDS
                .iter()
                .map(|&t| step.iter().zip(&kl).find(|(_, &k)| k < t).map(|(&s, _)| s as usize))
                .collect();
        }
    }
    Ok(RunFacts { name: m.name.clone(), converged: m.converged, iterations, final_kl_x, steps_to_threshold })
}

fn diff_file(name: &str, a: &Path, b: &Path) -> Result<FileDiff> {
    let (x, y) = (NumericCsv::read(&a.join(name))?, NumericCsv::read(&b.join(name))?);
    let mut max_abs_diff: f64 = 0.0;
    let mut text_mismatches = 0;
    let (mut g_delta, mut r_delta) = (None::<f64>, None::<f64>);
    for (k, col) in x.header.iter().enumerate() {
        let Some(kb) = y.col(col) else { continue };
        let mut worst: f64 = 0.0;
        for (ra, (rb, (ta, tb))) in x.rows.iter().zip(y.rows.iter().zip(x.text.iter().zip(&y.text))) {
            if ra[k].is_nan() || rb[kb].is_nan() {
                text_mismatches += usize::from(ta[k] != tb[kb]);
            } else {
                worst = worst.max((ra[k] - rb[kb]).abs());
            }
        }
        max_abs_diff = max_abs_diff.max(worst);
        match col.as_str() {
            "G" | "G_bits" => g_delta = Some(worst),
            "R" | "R_bits" => r_delta = Some(worst),
            _ => {}
        }
    }
    Ok(FileDiff {
        name: name.to_string(),
        same_header: x.header == y.header,
        rows: (x.rows.len(), y.rows.len()),
        max_abs_diff,
        text_mismatches,
        g_delta,
        r_delta,
    })
}

/// Compares two run directories of the same kind and problem instance.
pub fn compare_runs(dir_a: &Path, dir_b: &Path) -> Result<CompareReport> {
    let ma = Manifest::read(dir_a).with_context(|| format!("run A at {}", dir_a.display()))?;
    let mb = Manifest::read(dir_b).with_context(|| format!("run B at {}", dir_b.display()))?;
    if ma.kind != mb.kind {
        return Err(anyhow::anyhow!("incompatible runs: {} vs {}", ma.kind, mb.kind)).context(ExitKind::Config);
    }
    if ma.instance_sha256 != mb.instance_sha256 {
        return Err(anyhow::anyhow!("incompatible runs: {} and {} solve different instances", ma.name, mb.name))
            .context(ExitKind::Config);
    }
    let (a, b) = (facts(dir_a, &ma)?, facts(dir_b, &mb)?);
    let mut files = Vec::new();
    for name in ma.files.keys().filter(|n| n.ends_with(".csv") && mb.files.contains_key(*n)) {
        files.push(diff_file(name, dir_a, dir_b)?);
    }
    if files.is_empty() {
        bail!("runs share no CSV outputs");
    }
    let data = |m: &Manifest| -> Vec<(String, String)> {
        m.files.iter().filter(|(n, _)| !n.ends_with(".svg")).map(|(n, h)| (n.clone(), h.clone())).collect()
    };
    let identical = data(&ma) == data(&mb);
    let score = |r: &RunFacts| if r.converged { r.iterations } else { usize::MAX };
    let faster = match score(&a).cmp(&score(&b)) {
        std::cmp::Ordering::Less => Faster::A,
        std::cmp::Ordering::Greater => Faster::B,
        std::cmp::Ordering::Equal => Faster::Tie,
    };
    Ok(CompareReport { kind: ma.kind.clone(), a, b, files, identical, faster })
}
