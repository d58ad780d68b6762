//! Benchmark and correlation tables as Markdown and JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datamodel::{EvalGroup, Metric, PairScoreRecord};
use crate::error::Result;
use crate::pipeline::{benchmark, correlation_matrix, Benchmark, CorrelationResult};

/// Metric order of the correlation matrix.
pub const MATRIX_METRICS: [Metric; 4] = [Metric::Pmos, Metric::LogF0Rmse, Metric::Mcd, Metric::Dswed];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub x: Metric,
    pub y: Metric,
    pub result: Option<CorrelationResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub alpha: f64,
    pub benchmark: Benchmark,
    pub correlations: Vec<CorrelationCell>,
}

/// Objective metrics present in at least one record, in table order.
fn present_metrics(records: &[PairScoreRecord], candidates: &[Metric]) -> Vec<Metric> {
    candidates
        .iter()
        .copied()
        .filter(|&m| records.iter().any(|r| r.get(m).is_some()))
        .collect()
}

pub fn build_report(groups: &[EvalGroup], records: &[PairScoreRecord], alpha: f64) -> Result<Report> {
    let objective = present_metrics(records, &Metric::OBJECTIVE);
    let bench = benchmark(groups, records, &objective)?;
    // the matrix is anchored on human ratings; without them only the benchmark is reported
    let matrix_metrics = if records.iter().any(|r| r.pmos.is_some()) {
        present_metrics(records, &MATRIX_METRICS)
    } else {
        Vec::new()
    };
    let correlations = correlation_matrix(records, &matrix_metrics, alpha)
        .into_iter()
        .map(|(x, y, r)| match r {
            Ok(c) => CorrelationCell {
                x,
                y,
                result: Some(c),
                error: None,
            },
            Err(e) => CorrelationCell {
                x,
                y,
                result: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(Report {
        alpha,
        benchmark: bench,
        correlations,
    })
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(v) => format!("{v:.digits$}"),
        None => "n/a".into(),
    }
}

impl Report {
    fn cell(&self, a: Metric, b: Metric) -> Option<&CorrelationCell> {
        self.correlations
            .iter()
            .find(|c| (c.x == a && c.y == b) || (c.x == b && c.y == a))
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let b = &self.benchmark;
        out.push_str("## Diversity benchmark\n\n");
        let mut header = String::from("| System |");
        let mut rule = String::from("|---|");
        for mb in &b.metrics {
            let name = mb.metric.display_name();
            let _ = write!(header, " {name} Avg. \u{2191} | {name} Borda Avg. \u{2191} |");
            rule.push_str("---:|---:|");
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for (i, system) in b.systems.iter().enumerate() {
            let _ = write!(out, "| {system} |");
            for mb in &b.metrics {
                let avg = mb.averages[i].map(|a| a.mean);
                let borda = mb.borda.as_ref().and_then(|t| t.mean_for(system));
                let _ = write!(out, " {} | {} |", fmt_opt(avg, 3), fmt_opt(borda, 2));
            }
            out.push('\n');
        }
        for mb in &b.metrics {
            if let Some(e) = &mb.borda_error {
                let _ = writeln!(out, "\n{}: Borda unavailable ({e})", mb.metric.display_name());
            }
        }

        let metrics: Vec<Metric> = MATRIX_METRICS
            .iter()
            .copied()
            .filter(|&m| self.correlations.iter().any(|c| c.x == m || c.y == m))
            .collect();
        if metrics.is_empty() {
            return out;
        }
        let _ = writeln!(
            out,
            "\n## Correlation (mean per-group Pearson r, {:.0}% CI)\n",
            (1.0 - self.alpha) * 100.0
        );
        let _ = write!(out, "| |");
        for m in &metrics {
            let _ = write!(out, " {} |", m.display_name());
        }
        let _ = write!(out, "\n|---|");
        for _ in &metrics {
            out.push_str("---|");
        }
        out.push('\n');
        for &row in &metrics {
            let _ = write!(out, "| {} |", row.display_name());
            for &col in &metrics {
                let text = if row == col {
                    "-".to_string()
                } else {
                    match self.cell(row, col) {
                        Some(CorrelationCell { result: Some(c), .. }) => {
                            let a = &c.aggregate;
                            format!(
                                "{:.2} [{:.2}, {:.2}]{}",
                                a.r_bar,
                                a.ci_low,
                                a.ci_high,
                                significance_stars(a.p_value)
                            )
                        }
                        _ => "n/a".into(),
                    }
                };
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
        out.push_str("\n\\* p < 0.05, \\*\\* p < 0.01, \\*\\*\\* p < 0.001\n");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
