//! Report files: fixed-precision number formatting, CSV tables with comment
//! headers, and the manifest.
//!
//! Precision by kind of quantity:
//! probabilities and effects 8 decimals, coefficients and standard errors 6
//! significant digits in scientific form, p-values 4 significant digits in
//! scientific form, gas 2 decimals, USD 6 decimals, ETH 9 decimals, test
//! statistics and skewness 6 decimals. Non-finite values print as `NA`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub fn fixed(v: f64, decimals: usize) -> String {
    if v.is_finite() {
        // Avoid "-0.000" for values that round to zero.
        let s = format!("{v:.decimals$}");
        if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
            s[1..].to_string()
        } else {
            s
        }
    } else {
        "NA".into()
    }
}

pub fn sci(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{:.*e}", digits.saturating_sub(1), v)
    } else {
        "NA".into()
    }
}

pub fn prob(v: f64) -> String {
    fixed(v, 8)
}

pub fn coef(v: f64) -> String {
    sci(v, 6)
}

pub fn pval(v: f64) -> String {
    sci(v, 4)
}

pub fn gas(v: f64) -> String {
    fixed(v, 2)
}

pub fn usd(v: f64) -> String {
    fixed(v, 6)
}

pub fn eth(v: f64) -> String {
    fixed(v, 9)
}

pub fn stat(v: f64) -> String {
    fixed(v, 6)
}

pub fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "NA".into())
}

/// A CSV table with `#` comment lines above the header.
#[derive(Debug, Clone, Default)]
pub struct Table {
    comments: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        self.comments.push(line.into());
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        for c in &self.comments {
            buf.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(buf);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Input(e.to_string()))
    }
}

/// Output directory handle. Writes are whole-file, so a file is either
/// absent or complete.
#[derive(Debug, Clone)]
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    pub fn write_table(&self, name: &str, table: &Table) -> Result<()> {
        self.write_bytes(name, &table.render()?)
    }

    pub fn remove(&self, name: &str) -> Result<()> {
        let p = self.path(name);
        match std::fs::remove_file(&p) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(&p, e)),
        }
    }

    /// Data rows per file: CSV lines after the header, or non-blank lines
    /// for text files; `#` comments never count.
    pub fn row_counts(&self) -> Result<BTreeMap<String, usize>> {
        let mut out = BTreeMap::new();
        let rd = std::fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for entry in rd {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name == MANIFEST || !entry.path().is_file() {
                continue;
            }
            let text = std::fs::read_to_string(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            let lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count();
            let rows = if name.ends_with(".csv") { lines.saturating_sub(1) } else { lines };
            out.insert(name, rows);
        }
        Ok(out)
    }
}

pub const MANIFEST: &str = "manifest.txt";

/// Plot-ready figure data: description and the file pattern holding it.
pub const FIGURES: [(&str, &str); 13] = [
    ("MEV block formation", "mev_share_daily.csv"),
    ("validator revenue", "revenue_daily.csv"),
    ("daily average marginal effects", "ame_daily.csv"),
    ("daily quantile marginal effects", "ame_quantiles_daily.csv"),
    ("to-DEX effects in USD", "to_dex_usd_daily.csv"),
    ("daily reordering costs", "insurance_daily.csv"),
    ("sandwich attack counts", "sandwich_daily.csv"),
    ("sandwich-leg AMEs and quantiles", "sandwich_leg_effects_daily.csv"),
    ("excluded transactions", "effects_filter_daily.csv"),
    ("distribution of marginal effects", "effects_filtered_hist.csv"),
    ("sandwich cost coefficient", "effect_regression_daily.csv"),
    ("block sandwiches coefficient", "effect_regression_daily.csv"),
    ("skewness", "skewness_daily.csv"),
];

/// A stage or stage-day that did not finish.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Failure {
    pub stage: String,
    pub date: Option<chrono::NaiveDate>,
    pub message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.date {
            Some(d) => write!(f, "{} {}: {}", self.stage, d, self.message),
            None => write!(f, "{}: {}", self.stage, self.message),
        }
    }
}

/// Writes `manifest.txt` from the current directory contents.
pub fn write_manifest(out: &OutDir, config_hash: &str, stages: &[&str], failures: &[Failure]) -> Result<BTreeMap<String, usize>> {
    let counts = out.row_counts()?;
    let mut s = String::new();
    let _ = writeln!(s, "config_sha256 = {config_hash}");
    let _ = writeln!(s, "stages = {}", stages.join(","));
    let _ = writeln!(s, "status = {}", if failures.is_empty() { "complete" } else { "incomplete" });
    let _ = writeln!(s);
    let _ = writeln!(s, "[files]");
    for (name, n) in &counts {
        let _ = writeln!(s, "{name} rows={n}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "[figures]");
    for (i, (what, file)) in FIGURES.iter().enumerate() {
        let state = if counts.contains_key(*file) { "" } else { " (not emitted)" };
        let _ = writeln!(s, "figure{:02} {what}: {file}{state}", i + 1);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "[incomplete]");
    let mut f = failures.to_vec();
    f.sort();
    for x in &f {
        let _ = writeln!(s, "{x}");
    }
    out.write_bytes(MANIFEST, s.as_bytes())?;
    Ok(counts)
}
