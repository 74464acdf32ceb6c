//! CSV tables, JSON cells and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use svb_core::scalar::fmt17;

use crate::ExitKind;

pub const MANIFEST: &str = "manifest.json";

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::Num(x) => fmt17(*x),
            Self::Int(k) => k.to_string(),
            Self::Bool(b) => b.to_string(),
            Self::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(k: usize) -> Self {
        Self::Int(k)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Self::Bool(b)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Self::Text(s.to_string())
    }
}

/// Header plus rows, rendered with UNIX newlines.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(header: I) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// JSON array of numbers at 17 significant digits.
pub fn json_numbers(v: impl IntoIterator<Item = f64>) -> String {
    let cells: Vec<String> = v.into_iter().map(fmt17).collect();
    format!("[{}]", cells.join(","))
}

/// JSON array of number arrays, one per line.
pub fn json_matrix<'a>(rows: impl IntoIterator<Item = ndarray::ArrayView1<'a, f64>>) -> String {
    let rows: Vec<String> = rows.into_iter().map(|r| format!("    {}", json_numbers(r.iter().copied()))).collect();
    format!("[\n{}\n  ]", rows.join(",\n"))
}

/// Writes files into one run directory and records their checksums.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display())).context(ExitKind::Io)?;
        Ok(Self { root: root.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `name` (a relative path with `/` separators).
    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))
                .context(ExitKind::Io)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display())).context(ExitKind::Io)?;
        self.files.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<()> {
        self.write(name, &table.render())
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn into_files(self) -> BTreeMap<String, String> {
        self.files
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance record written last into every run directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub name: String,
    pub config_sha256: String,
    /// Hash of the problem instance alone, ignoring algorithm settings.
    pub instance_sha256: String,
    pub started: String,
    pub finished: String,
    pub deterministic: bool,
    pub jobs: usize,
    pub converged: bool,
    pub files: BTreeMap<String, String>,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display())).context(ExitKind::Io)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).context(ExitKind::Io)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display())).context(ExitKind::Io)
    }
}

/// A CSV file read back as a header and numeric columns (non-numeric cells become NaN).
#[derive(Clone, Debug)]
pub struct NumericCsv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub text: Vec<Vec<String>>,
}

impl NumericCsv {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)
            .with_context(|| format!("reading {}", path.display()))
            .context(ExitKind::Io)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut text = Vec::new();
        for rec in rdr.records() {
            let rec = rec.with_context(|| format!("parsing {}", path.display())).context(ExitKind::Io)?;
            rows.push(rec.iter().map(|c| c.parse::<f64>().unwrap_or(f64::NAN)).collect());
            text.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows, text })
    }

    pub fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.col(name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}
