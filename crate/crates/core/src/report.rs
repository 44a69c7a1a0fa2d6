//! Tables in the published layouts, rendered from round logs: labeled-set
//! growth per round, mAP per round, and per-class scores at the initial,
//! best and full stages.

use std::fmt::Write as _;

use thiserror::Error;

use crate::al::{RoundEntry, RoundLog};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no round logs to report")]
    NoLogs,
    #[error("log for {0} has no entries")]
    EmptyLog(String),
    #[error("log for {0} carries no evaluation metrics")]
    MissingMetrics(String),
}

/// A round log tagged with the method and pool strategy that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLog {
    pub method: String,
    pub strategy: String,
    pub log: RoundLog,
}

impl LabeledLog {
    pub fn new(method: impl Into<String>, strategy: impl Into<String>, log: RoundLog) -> Self {
        LabeledLog {
            method: method.into(),
            strategy: strategy.into(),
            log,
        }
    }

    fn tag(&self) -> String {
        format!("{}/{}", self.method, self.strategy)
    }
}

/// A header row plus data rows of equal width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Columns padded to their widest cell, two spaces apart. The first
    /// column repeats are blanked so method groups read as blocks.
    pub fn to_text(&self) -> String {
        let cols = self.header.len();
        let mut width = vec![0; cols];
        for row in std::iter::once(&self.header).chain(&self.rows) {
            for (w, cell) in width.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let mut prev_first: Option<&str> = None;
        for (i, row) in std::iter::once(&self.header).chain(&self.rows).enumerate() {
            let mut line = String::new();
            for (c, cell) in row.iter().enumerate() {
                let shown = if i > 0 && c == 0 && prev_first == Some(cell.as_str()) { "" } else { cell.as_str() };
                if c > 0 {
                    line.push_str("  ");
                }
                let _ = write!(line, "{shown:<w$}", w = width[c]);
            }
            if i > 0 {
                prev_first = row.first().map(String::as_str);
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = row.iter().map(|c| csv_cell(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Percent with one decimal; a trailing `.0` is dropped (`66`, `41.2`).
pub fn percent(v: f64) -> String {
    let s = format!("{:.1}", v * 100.0);
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

fn round_grid(
    logs: &[LabeledLog],
    cell: impl Fn(&LabeledLog, &RoundEntry) -> Result<String, ReportError>,
) -> Result<Table, ReportError> {
    if logs.is_empty() {
        return Err(ReportError::NoLogs);
    }
    let rounds = logs.iter().map(|l| l.log.entries.len()).max().unwrap_or(0);
    let mut header = vec!["Method".to_string(), "Strategy".to_string()];
    header.extend((1..=rounds).map(|r| if r == 1 { "Round1".to_string() } else { r.to_string() }));
    let mut rows = Vec::with_capacity(logs.len());
    for l in logs {
        if l.log.entries.is_empty() {
            return Err(ReportError::EmptyLog(l.tag()));
        }
        let mut row = vec![l.method.clone(), l.strategy.clone()];
        for e in &l.log.entries {
            row.push(cell(l, e)?);
        }
        row.resize(rounds + 2, String::new());
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Labeled-set size per round, one row per method and strategy.
pub fn growth_table(logs: &[LabeledLog]) -> Result<Table, ReportError> {
    round_grid(logs, |_, e| Ok(e.labeled.to_string()))
}

/// mAP50 (percent) per round.
pub fn score_table(logs: &[LabeledLog]) -> Result<Table, ReportError> {
    round_grid(logs, |l, e| {
        e.metrics
            .as_ref()
            .map(|m| m.map.map(percent).unwrap_or_default())
            .ok_or_else(|| ReportError::MissingMetrics(l.tag()))
    })
}

fn title_case(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn stage_row(label: &str, e: &RoundEntry, classes: usize, tag: &str) -> Result<Vec<String>, ReportError> {
    let m = e.metrics.as_ref().ok_or_else(|| ReportError::MissingMetrics(tag.to_string()))?;
    let mut row = vec![format!("{label} ({})", e.labeled), m.map.map(percent).unwrap_or_default()];
    for c in 0..classes {
        let ap = m.class_ap.get(c).copied().flatten().map(percent).unwrap_or_default();
        let n = e.class_counts.get(c).copied().unwrap_or(0);
        row.push(format!("{ap} / {n}"));
    }
    Ok(row)
}

/// Per-class AP and label counts at the initial state, at the best-scoring
/// round of `al`, and at the last entry of `full` (or of `al` when no
/// separate full-data log is given).
pub fn stage_table(al: &LabeledLog, full: Option<&LabeledLog>, class_names: &[String]) -> Result<Table, ReportError> {
    let tag = al.tag();
    let first = al.log.entries.first().ok_or_else(|| ReportError::EmptyLog(tag.clone()))?;
    let score = |e: &RoundEntry| e.metrics.as_ref().and_then(|m| m.map);
    let mut best = first;
    for e in &al.log.entries {
        if score(e).is_some_and(|s| score(best).is_none_or(|b| s > b)) {
            best = e;
        }
    }
    let full = full.unwrap_or(al);
    let last = full.log.entries.last().ok_or_else(|| ReportError::EmptyLog(full.tag()))?;

    let mut header = vec![String::new(), "mAP".to_string()];
    header.extend(class_names.iter().map(|n| format!("{}(mAP/ label numbers)", title_case(n))));
    let k = class_names.len();
    let rows = vec![
        stage_row("Initial", first, k, &tag)?,
        stage_row("Active Learning", best, k, &tag)?,
        stage_row("Full", last, k, &full.tag())?,
    ];
    Ok(Table { header, rows })
}
