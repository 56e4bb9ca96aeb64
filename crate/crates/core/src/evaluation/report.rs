//! Report store (one CSV per run) and cross-run comparison tables.

use super::bleu::BleuReport;
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub src: String,
    pub tgt: String,
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    /// "trained", "zero-shot", "ft", ...
    pub kind: String,
}

impl ReportRow {
    pub fn new(src: &str, tgt: &str, report: &BleuReport, kind: &str) -> ReportRow {
        ReportRow {
            src: src.to_string(),
            tgt: tgt.to_string(),
            bleu: report.score,
            precisions: report.precisions,
            brevity_penalty: report.brevity_penalty,
            kind: kind.to_string(),
        }
    }

    pub fn direction(&self) -> String {
        format!("{}-{}", self.src, self.tgt)
    }
}

pub const REPORT_HEADER: &str = "src,tgt,bleu,p1,p2,p3,p4,bp,kind";

pub fn write_reports(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.src,
            r.tgt,
            r.bleu,
            r.precisions[0],
            r.precisions[1],
            r.precisions[2],
            r.precisions[3],
            r.brevity_penalty,
            r.kind
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != REPORT_HEADER {
                return Err(Error::Eval(format!("unexpected report header `{line}`")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(Error::Eval(format!("report line {}: `{line}`", i + 1)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Eval(format!("report line {}: bad number `{s}`", i + 1)))
        };
        rows.push(ReportRow {
            src: parts[0].to_string(),
            tgt: parts[1].to_string(),
            bleu: num(parts[2])?,
            precisions: [num(parts[3])?, num(parts[4])?, num(parts[5])?, num(parts[6])?],
            brevity_penalty: num(parts[7])?,
            kind: parts[8].to_string(),
        });
    }
    Ok(rows)
}

/// One run's label and its report rows.
pub struct RunColumn {
    pub name: String,
    pub rows: Vec<ReportRow>,
}

/// Per-direction BLEU columns for several runs plus an unweighted Average
/// row. Directions missing from a run render blank.
pub struct Comparison {
    pub directions: Vec<String>,
    pub columns: Vec<String>,
    /// cells[direction][column]
    pub cells: Vec<Vec<Option<f64>>>,
    pub averages: Vec<Option<f64>>,
}

pub fn compare_runs(runs: &[RunColumn]) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::Eval("no runs to compare".into()));
    }
    let mut directions: Vec<String> = Vec::new();
    for run in runs {
        for row in &run.rows {
            let d = row.direction();
            if !directions.contains(&d) {
                directions.push(d);
            }
        }
    }
    directions.sort();
    let per_run: Vec<BTreeMap<String, f64>> = runs
        .iter()
        .map(|r| r.rows.iter().map(|row| (row.direction(), row.bleu)).collect())
        .collect();
    let cells: Vec<Vec<Option<f64>>> = directions
        .iter()
        .map(|d| per_run.iter().map(|m| m.get(d).copied()).collect())
        .collect();
    let averages: Vec<Option<f64>> = (0..runs.len())
        .map(|c| {
            let vals: Vec<f64> = cells.iter().filter_map(|row| row[c]).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect();
    Ok(Comparison {
        directions,
        columns: runs.iter().map(|r| r.name.clone()).collect(),
        cells,
        averages,
    })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let dir_w = self
            .directions
            .iter()
            .map(|d| d.len())
            .chain(std::iter::once("Average".len()))
            .max()
            .unwrap_or(8)
            .max(9);
        let col_w = self.columns.iter().map(|c| c.len()).max().unwrap_or(6).max(8);
        let mut out = String::new();
        let _ = write!(out, "{:<dir_w$}", "direction");
        for c in &self.columns {
            let _ = write!(out, "  {c:>col_w$}");
        }
        out.push('\n');
        for (d, row) in self.directions.iter().zip(&self.cells) {
            let _ = write!(out, "{d:<dir_w$}");
            for cell in row {
                match cell {
                    Some(v) => {
                        let _ = write!(out, "  {:>col_w$.2}", v);
                    }
                    None => {
                        let _ = write!(out, "  {:>col_w$}", "-");
                    }
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<dir_w$}", "Average");
        for avg in &self.averages {
            match avg {
                Some(v) => {
                    let _ = write!(out, "  {:>col_w$.2}", v);
                }
                None => {
                    let _ = write!(out, "  {:>col_w$}", "-");
                }
            }
        }
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("direction");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (d, row) in self.directions.iter().zip(&self.cells) {
            out.push_str(d);
            for cell in row {
                out.push(',');
                if let Some(v) = cell {
                    let _ = write!(out, "{v:.4}");
                }
            }
            out.push('\n');
        }
        out.push_str("Average");
        for avg in &self.averages {
            out.push(',');
            if let Some(v) = avg {
                let _ = write!(out, "{v:.4}");
            }
        }
        out.push('\n');
        out
    }
}
