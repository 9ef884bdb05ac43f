//! Comparison tables: per-cell CSV/JSON rows and the per-size summary.

use std::fmt::Write as _;

use adaptive_admm::engine::{ComparisonRow, ComparisonTable, RunStatus, SizeSummary};
use serde::Serialize;

use crate::error::Result;

pub const CSV_HEADER: [&str; 8] =
    ["seed", "N", "topology", "fixed_iters", "adaptive_iters", "ratio", "status_fixed", "status_adaptive"];

/// A sweep cell that could not be run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedCell {
    pub seed: u64,
    #[serde(rename = "N")]
    pub agents: usize,
    pub topology: String,
    pub error: String,
}

/// Completed rows plus the cells that failed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Sweep {
    pub table: ComparisonTable,
    pub failures: Vec<FailedCell>,
}

impl Sweep {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.table.rows {
            w.write_record([
                r.seed.to_string(),
                r.agents.to_string(),
                r.topology.clone(),
                r.fixed.iterations.to_string(),
                r.adaptive.iterations.to_string(),
                r.ratio().to_string(),
                r.fixed.status.as_str().to_string(),
                r.adaptive.status.as_str().to_string(),
            ])?;
        }
        for f in &self.failures {
            w.write_record([&f.seed.to_string(), &f.agents.to_string(), &f.topology, "", "", "", "error", "error"])?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            rows: &'a [ComparisonRow],
            summary: Vec<SizeSummary>,
            failures: &'a [FailedCell],
        }
        let doc = Doc { rows: &self.table.rows, summary: self.table.summary(), failures: &self.failures };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Parses a comparison CSV back into rows. Failed cells are skipped.
pub fn rows_from_csv(text: &str) -> Result<Vec<ComparisonRow>> {
    use adaptive_admm::engine::ArmOutcome;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let status = |s: &str| match s {
        "converged" => Some(RunStatus::Converged),
        "iteration_limit" => Some(RunStatus::IterationLimit),
        "diverged" => Some(RunStatus::Diverged),
        _ => None,
    };
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| crate::error::CliError::Usage(format!("comparison table line {line}: bad {what}"));
        let (Some(sf), Some(sa)) = (status(&rec[6]), status(&rec[7])) else {
            continue;
        };
        rows.push(ComparisonRow {
            seed: rec[0].parse().map_err(|_| bad("seed"))?,
            agents: rec[1].parse().map_err(|_| bad("N"))?,
            topology: rec[2].to_string(),
            fixed: ArmOutcome { status: sf, iterations: rec[3].parse().map_err(|_| bad("fixed_iters"))? },
            adaptive: ArmOutcome { status: sa, iterations: rec[4].parse().map_err(|_| bad("adaptive_iters"))? },
        });
    }
    Ok(rows)
}

fn cell(value: f64, censored: bool) -> String {
    if censored {
        format!("≥ {value:.0}")
    } else {
        format!("{value:.0}")
    }
}

/// Fixed-width summary: mean and median iterations per arm and size.
///
/// Means over arms with capped runs are lower bounds and print as
/// `≥ value`, as does a median that sits at the cap.
pub fn render_summary(summary: &[SizeSummary], max_iter: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5} {:>5} {:>12} {:>12} {:>12} {:>12} {:>8}  verdict",
        "N", "runs", "fixed mean", "fixed med", "adapt mean", "adapt med", "ratio"
    );
    let cap = max_iter as f64;
    for s in summary {
        let verdict = if s.median_ratio < 1.0 {
            "adaptive faster"
        } else if s.median_ratio > 1.0 {
            "fixed faster"
        } else {
            "no difference"
        };
        let _ = writeln!(
            out,
            "{:>5} {:>5} {:>12} {:>12} {:>12} {:>12} {:>8.3}  {verdict}",
            s.agents,
            s.runs,
            cell(s.mean_fixed, s.censored_fixed > 0),
            cell(s.median_fixed, s.median_fixed >= cap),
            cell(s.mean_adaptive, s.censored_adaptive > 0),
            cell(s.median_adaptive, s.median_adaptive >= cap),
            s.median_ratio,
        );
    }
    out
}
