//! Run results and the artifacts written from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use slipflow::rough_stokes::SweepRecord;
use slipflow::GridField;

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "==")]
    Matches,
}

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip formatting, so reruns produce identical bytes.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepLine {
    pub case: String,
    #[serde(flatten)]
    pub record: SweepRecord,
}

#[derive(Debug, Default)]
pub struct Report {
    pub criteria: Vec<Criterion>,
    pub tables: BTreeMap<String, Table>,
    pub sweeps: Vec<SweepLine>,
    pub fields: Vec<(String, GridField)>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn at_most(&mut self, name: impl Into<String>, value: f64, tolerance: f64) {
        self.push(name.into(), value, tolerance, Comparison::AtMost, value <= tolerance);
    }

    pub fn at_least(&mut self, name: impl Into<String>, value: f64, tolerance: f64) {
        self.push(name.into(), value, tolerance, Comparison::AtLeast, value >= tolerance);
    }

    /// Boolean agreement, recorded as `1`/`0` against a required `1`.
    pub fn matches(&mut self, name: impl Into<String>, ok: bool) {
        self.push(name.into(), if ok { 1.0 } else { 0.0 }, 1.0, Comparison::Matches, ok);
    }

    fn push(&mut self, name: String, value: f64, tolerance: f64, comparison: Comparison, pass: bool) {
        // NaN never passes.
        let pass = pass && !value.is_nan();
        self.criteria.push(Criterion {
            name,
            value,
            tolerance,
            comparison,
            pass,
        });
    }

    pub fn sweeps(&mut self, case: &str, history: &[SweepRecord]) {
        self.sweeps.extend(history.iter().map(|r| SweepLine {
            case: case.to_string(),
            record: *r,
        }));
    }

    pub fn failures(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter().filter(|c| !c.pass)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    subcommand: &'a str,
    seed: u64,
    config: &'a serde_json::Value,
    passed: bool,
    criteria: &'a [Criterion],
    notes: &'a [String],
}

/// Write `summary.json`, `tables/*.csv`, `sweeps.jsonl` and any fields under `fields/`.
pub fn write_artifacts(out: &Path, subcommand: &str, seed: u64, config: &serde_json::Value, report: &Report) -> Result<(), RunError> {
    fs::create_dir_all(out.join("tables"))?;
    let summary = Summary {
        subcommand,
        seed,
        config,
        passed: report.passed(),
        criteria: &report.criteria,
        notes: &report.notes,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    for (name, table) in &report.tables {
        let mut w = csv::Writer::from_path(out.join("tables").join(format!("{name}.csv")))?;
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    let mut lines = String::new();
    for s in &report.sweeps {
        lines += &serde_json::to_string(s)?;
        lines.push('\n');
    }
    fs::write(out.join("sweeps.jsonl"), lines)?;
    if !report.fields.is_empty() {
        fs::create_dir_all(out.join("fields"))?;
        for (name, f) in &report.fields {
            f.write(&out.join("fields").join(name))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_never_passes() {
        let mut r = Report::default();
        r.at_most("x", f64::NAN, 1.0);
        r.at_least("y", f64::NAN, 0.0);
        assert_eq!(r.failures().count(), 2);
    }

    #[test]
    fn boundary_values_pass() {
        let mut r = Report::default();
        r.at_most("x", 1.0, 1.0);
        r.at_least("y", 1.0, 1.0);
        r.matches("z", true);
        assert!(r.passed());
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1e-300, 3.0, -2.5e7] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }
}
