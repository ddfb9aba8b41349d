use crate::config::ExperimentConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), comments: Vec::new(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn comment(mut self, c: impl Into<String>) -> Self {
        self.comments.push(c.into());
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for c in &self.comments {
            s.push_str(&format!("# {c}\n"));
        }
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Parse our CSV dialect back into (columns, rows).
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().context("CSV has no header row")?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let row: Vec<f64> = l.split(',').map(|c| c.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().with_context(|| format!("row {} is not numeric", i + 1))?;
        if row.len() != columns.len() {
            anyhow::bail!("row {} has {} cells, header has {}", i + 1, row.len(), columns.len());
        }
        rows.push(row);
    }
    Ok((columns, rows))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition on `value`.
    pub condition: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, condition: format!("≤ {bound:e}"), pass: value <= bound }
    }

    pub fn within(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Check { name: name.into(), value, condition: format!("{target} ± {tol}"), pass: (value - target).abs() <= tol }
    }

    pub fn holds(name: &str, value: f64, condition: &str, pass: bool) -> Self {
        Check { name: name.into(), value, condition: condition.into(), pass }
    }
}

/// What `plot` should draw from a report.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlotSpec {
    /// log-log data with a reference power law through the first point.
    LogLog { table: String, x: String, y: Vec<String>, reference_slope: Option<f64> },
    Line { table: String, x: String, y: Vec<String> },
    /// One bar per row, labelled by column `label`.
    Bars { table: String, label: String, y: String, log: bool },
}

pub struct Outcome {
    pub tables: Vec<Table>,
    pub metrics: Map<String, Value>,
    pub checks: Vec<Check>,
    pub plots: Vec<PlotSpec>,
}

impl Outcome {
    pub fn new() -> Self {
        Outcome { tables: Vec::new(), metrics: Map::new(), checks: Vec::new(), plots: Vec::new() }
    }

    pub fn metric(&mut self, key: &str, v: impl Into<Value>) {
        self.metrics.insert(key.into(), v.into());
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub experiment: String,
    pub versions: Map<String, Value>,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
    pub metrics: Map<String, Value>,
    pub checks: Vec<Check>,
    pub plots: Vec<PlotSpec>,
    pub pass: bool,
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn versions() -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("halfkg".into(), Value::from(halfkg::VERSION));
    m.insert("halfkg-cli".into(), Value::from(env!("CARGO_PKG_VERSION")));
    m
}

/// Writes every table and `summary.json` into `dir`; returns the summary.
pub fn write_report(dir: &Path, cfg: &ExperimentConfig, out: &Outcome) -> Result<Summary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    for t in &out.tables {
        write_atomic(&dir.join(t.file_name()), t.to_csv().as_bytes())?;
        files.push(t.file_name());
    }
    let summary = Summary {
        schema: SCHEMA_VERSION,
        experiment: cfg.experiment.clone(),
        versions: versions(),
        config: cfg.clone(),
        files,
        metrics: out.metrics.clone(),
        checks: out.checks.clone(),
        plots: out.plots.clone(),
        pass: out.passed(),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_atomic(&dir.join("summary.json"), text.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = Table::new("x", &["t", "v"]).comment("unit test");
        t.push(vec![0.5, -1.25e-9]);
        t.push(vec![1.0, f64::INFINITY]);
        let text = t.to_csv();
        assert!(text.starts_with("# unit test\nt,v\n"));
        let (c, r) = read_csv(&text).unwrap();
        assert_eq!(c, vec!["t", "v"]);
        assert_eq!(r, t.rows);
        assert!(read_csv("# only a comment\n").is_err());
        assert!(read_csv("a,b\n1\n").is_err());
    }

    #[test]
    fn checks() {
        assert!(Check::within("e", -1.45, -1.5, 0.1).pass);
        assert!(!Check::at_most("m", 2.0, 1.0).pass);
    }
}
