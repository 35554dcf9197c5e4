//! Versioned JSON reports, verdicts and CSV tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use super::LabError;
use crate::hermite::CONVENTION;

pub const SCHEMA_VERSION: u32 = 1;

/// One pass/fail decision against a pre-registered tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub statistic: f64,
    pub tolerance: f64,
    /// Human-readable form of the test, e.g. `|x - 0.5| <= 0.05`.
    pub rule: String,
    pub passed: bool,
}

impl Verdict {
    /// `statistic <= tolerance`.
    pub fn at_most(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self { name: name.into(), statistic, tolerance, rule: format!("x <= {tolerance}"), passed: statistic <= tolerance }
    }

    /// `statistic < tolerance`.
    pub fn below(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self { name: name.into(), statistic, tolerance, rule: format!("x < {tolerance}"), passed: statistic < tolerance }
    }

    /// `statistic > tolerance`.
    pub fn above(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self { name: name.into(), statistic, tolerance, rule: format!("x > {tolerance}"), passed: statistic > tolerance }
    }

    /// `|statistic − target| <= tolerance`.
    pub fn within(name: impl Into<String>, statistic: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            tolerance,
            rule: format!("|x - {target}| <= {tolerance}"),
            passed: (statistic - target).abs() <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub hermite_convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub provenance: Provenance,
    pub metrics: serde_json::Value,
    pub verdicts: Vec<Verdict>,
    pub notices: Vec<String>,
    pub passed: bool,
}

impl ConvergenceReport {
    pub fn new(cfg: &ExperimentConfig, metrics: serde_json::Value, verdicts: Vec<Verdict>, notices: Vec<String>) -> Self {
        let passed = verdicts.iter().all(|v| v.passed);
        Self {
            schema_version: SCHEMA_VERSION,
            kind: cfg.kind,
            provenance: Provenance {
                config_hash: cfg.hash(),
                seed: cfg.seed,
                crate_version: env!("CARGO_PKG_VERSION").into(),
                hermite_convention: CONVENTION.into(),
            },
            metrics,
            verdicts,
            notices,
            passed,
        }
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Numeric table written as CSV with a header row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ConvergenceReport,
    pub tables: Vec<Table>,
}

impl ExperimentOutput {
    /// Writes `report.json` and one `<table>.csv` per table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), LabError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.report.to_json())?;
        for t in &self.tables {
            let f = fs::File::create(dir.join(format!("{}.csv", t.name)))?;
            t.write_csv(std::io::BufWriter::new(f))?;
        }
        Ok(())
    }

    pub fn exit_code(&self) -> i32 {
        if self.report.passed {
            0
        } else {
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_rules() {
        assert!(Verdict::within("a", 0.53, 0.5, 0.05).passed);
        assert!(!Verdict::within("a", 0.56, 0.5, 0.05).passed);
        assert!(Verdict::above("p", 0.02, 0.01).passed);
        assert!(!Verdict::below("w", 0.05, 0.05).passed);
        assert!(Verdict::at_most("w", 0.05, 0.05).passed);
        assert_eq!(Verdict::within("a", 0.5, 0.5, 0.05).rule, "|x - 0.5| <= 0.05");
    }

    #[test]
    fn table_csv_layout() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![1.0, 0.5]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n1e0,5e-1\n");
    }
}
