//! Structured check results and their CSV form.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    ReportOnly,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::ReportOnly => "REPORT",
        };
        f.write_str(s)
    }
}

/// One evaluated configuration. `margin` is signed slack: positive means the
/// asserted inequality holds with room to spare.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub config: String,
    pub t: Option<usize>,
    pub k: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// `None` for report-only rows.
    pub passed: Option<bool>,
}

impl CheckRow {
    /// Row asserting `lhs <= rhs`.
    pub fn upper(config: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        Self {
            config: config.into(),
            t: None,
            k: None,
            lhs,
            rhs,
            margin,
            passed: Some(margin >= 0.0 && lhs.is_finite()),
        }
    }

    pub fn report(config: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self {
            config: config.into(),
            t: None,
            k: None,
            lhs,
            rhs,
            margin: rhs - lhs,
            passed: None,
        }
    }

    pub fn at(mut self, t: usize) -> Self {
        self.t = Some(t);
        self
    }

    pub fn to(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub rows: Vec<CheckRow>,
    pub verdict: Verdict,
    pub tolerances: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            rows: Vec::new(),
            verdict: Verdict::Pass,
            tolerances: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn tolerance(mut self, key: impl Into<String>, value: f64) -> Self {
        self.tolerances.push((key.into(), value));
        self
    }

    pub fn push(&mut self, row: CheckRow) {
        self.rows.push(row);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Verdict from the asserted rows; report-only when none are asserted.
    pub fn finalize(mut self) -> Self {
        let asserted: Vec<bool> = self.rows.iter().filter_map(|r| r.passed).collect();
        self.verdict = if asserted.is_empty() {
            Verdict::ReportOnly
        } else if asserted.iter().all(|&p| p) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        self
    }

    /// Mark the report as report-only regardless of row outcomes.
    pub fn report_only(mut self) -> Self {
        for r in &mut self.rows {
            r.passed = None;
        }
        self.verdict = Verdict::ReportOnly;
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }

    pub fn failing_rows(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| r.passed == Some(false))
    }

    pub fn worst_margin(&self) -> Option<&CheckRow> {
        self.rows
            .iter()
            .filter(|r| r.passed.is_some())
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_reports_csv(std::slice::from_ref(self), out)
    }

    fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for r in &self.rows {
            let status = match r.passed {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "report",
            };
            w.write_record([
                self.name.as_str(),
                r.config.as_str(),
                &opt(r.t),
                &opt(r.k),
                &format!("{:e}", r.lhs),
                &format!("{:e}", r.rhs),
                &format!("{:e}", r.margin),
                status,
            ])?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "[{}] {} ({} rows)",
            self.verdict,
            self.name,
            self.rows.len()
        );
        if let Some(w) = self.worst_margin() {
            s.push_str(&format!(
                "; worst margin {:.3e} at {}",
                w.margin,
                if w.config.is_empty() { "-" } else { &w.config }
            ));
        }
        if !self.tolerances.is_empty() {
            let tol: Vec<String> = self
                .tolerances
                .iter()
                .map(|(k, v)| format!("{k}={v:e}"))
                .collect();
            s.push_str(&format!("; tolerances {}", tol.join(", ")));
        }
        for n in &self.notes {
            s.push_str(&format!("\n    note: {n}"));
        }
        s
    }
}

/// All rows of several reports under one header.
pub fn write_reports_csv<W: Write>(reports: &[CheckReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "check", "config", "t", "k", "lhs", "rhs", "margin", "status",
    ])?;
    for r in reports {
        r.write_rows(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
