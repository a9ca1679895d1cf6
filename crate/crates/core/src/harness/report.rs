use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{RunManifest, Strategy};
use super::HarnessError;
use crate::metrics::aggregate_report;
use crate::model::{PassAtKReport, SampleCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub program: String,
    pub public_reward: f64,
    pub private_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub task_id: String,
    pub samples: Vec<SampleOutcome>,
}

/// The experiment's output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub manifest: RunManifest,
    /// False when some samples are missing; the estimates then cover only
    /// problems with every sample present.
    pub complete: bool,
    pub per_problem: Vec<ProblemOutcome>,
    pub pass_at_k: BTreeMap<usize, f64>,
}

impl ExperimentReport {
    pub(crate) fn assemble(
        manifest: RunManifest,
        complete: bool,
        per_problem: Vec<ProblemOutcome>,
    ) -> Result<Self, HarnessError> {
        let mut report = Self {
            manifest,
            complete,
            per_problem,
            pass_at_k: BTreeMap::new(),
        };
        report.pass_at_k = report.pass_at_k_report()?.estimates;
        if let Some(path) = &report.manifest.output_path {
            let json = report.to_json()?;
            fs::write(path, json).map_err(|source| HarnessError::Io {
                path: path.clone(),
                source,
            })?;
        }
        Ok(report)
    }

    /// Per-problem `(n, c)` for every problem with all samples present.
    pub fn sample_counts(&self) -> BTreeMap<String, SampleCounts> {
        self.per_problem
            .iter()
            .filter(|p| p.samples.len() == self.manifest.samples_per_problem)
            .map(|p| {
                let c = p.samples.iter().filter(|s| s.private_pass).count();
                (p.task_id.clone(), SampleCounts { n: p.samples.len(), c })
            })
            .collect()
    }

    pub fn pass_at_k_report(&self) -> Result<PassAtKReport, HarnessError> {
        Ok(aggregate_report(&self.sample_counts(), &self.manifest.k_values)?)
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        let mut json = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Serialize(e.to_string()))?;
        json.push('\n');
        Ok(json)
    }

    pub fn label(&self) -> &'static str {
        match self.manifest.strategy {
            Strategy::LsrMcts => "lsr_mcts",
            Strategy::DirectSampling => "direct_sampling",
        }
    }
}

pub struct RenderedReport {
    pub table: String,
    pub json: String,
}

/// One row per strategy, one column per k.
pub fn render_table(rows: &[(&str, &PassAtKReport)]) -> String {
    let mut ks: Vec<usize> = rows.iter().flat_map(|(_, r)| r.k_values.iter().copied()).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut header = vec!["strategy".to_string()];
    header.extend(ks.iter().map(|k| format!("pass@{k}")));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, report)| {
            let mut row = vec![label.to_string()];
            row.extend(ks.iter().map(|k| match report.estimates.get(k) {
                Some(v) => format!("{:.4}", v),
                None => "-".to_string(),
            }));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            std::iter::once(&header)
                .chain(&body)
                .map(|r| r[i].len())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&header);
    line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for row in &body {
        line(row);
    }
    out
}

/// Table and JSON for one pass@k report.
pub fn render_report(label: &str, report: &PassAtKReport) -> Result<RenderedReport, HarnessError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| HarnessError::Serialize(e.to_string()))?;
    Ok(RenderedReport {
        table: render_table(&[(label, report)]),
        json,
    })
}

impl RenderedReport {
    pub fn write_json(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, &self.json).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
