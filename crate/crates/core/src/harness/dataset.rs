//! JSONL problem files.
//!
//! One object per line:
//!
//! ```json
//! {"task_id": "t/0", "prompt": "...", "starter_context": ["def f(a):"],
//!  "public_tests": ["assert f(1) == 2"], "private_tests": ["assert f(3) == 4"],
//!  "entry_point": "f"}
//! ```
//!
//! `starter_context` is optional. Synthetic problems also carry a
//! `synthetic_grammar` object that the mock generator draws from.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::model::{validate_problem, ProblemSpec, TestCase};
use crate::synthetic::GrammarSpec;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    task_id: String,
    prompt: String,
    #[serde(default)]
    starter_context: Vec<String>,
    public_tests: Vec<String>,
    private_tests: Vec<String>,
    entry_point: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    synthetic_grammar: Option<GrammarSpec>,
}

impl From<Record> for ProblemSpec {
    fn from(r: Record) -> Self {
        ProblemSpec {
            task_id: r.task_id,
            nl_description: r.prompt,
            starter_context: r.starter_context,
            public_tests: r.public_tests.into_iter().map(TestCase::new).collect(),
            private_tests: r.private_tests.into_iter().map(TestCase::new).collect(),
            entry_point: r.entry_point,
            synthetic_grammar: r.synthetic_grammar,
        }
    }
}

impl From<&ProblemSpec> for Record {
    fn from(p: &ProblemSpec) -> Self {
        let sources = |tests: &[TestCase]| tests.iter().map(|t| t.assertion_source.clone()).collect();
        Record {
            task_id: p.task_id.clone(),
            prompt: p.nl_description.clone(),
            starter_context: p.starter_context.clone(),
            public_tests: sources(&p.public_tests),
            private_tests: sources(&p.private_tests),
            entry_point: p.entry_point.clone(),
            synthetic_grammar: p.synthetic_grammar.clone(),
        }
    }
}

/// Loads every problem in a JSONL file.
///
/// A malformed or invalid line is fatal unless `permissive`, in which case it
/// is logged and skipped. Blank lines are ignored.
pub fn load_dataset(path: &Path, permissive: bool) -> Result<Vec<ProblemSpec>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut problems = Vec::new();
    let mut ids = HashSet::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Record>(raw)
            .map_err(|e| e.to_string())
            .map(ProblemSpec::from)
            .and_then(|p| {
                let mut problems = validate_problem(&p);
                if !ids.insert(p.task_id.clone()) {
                    problems.push(format!("duplicate task_id {:?}", p.task_id));
                }
                if problems.is_empty() {
                    Ok(p)
                } else {
                    Err(problems.join("; "))
                }
            });
        match parsed {
            Ok(p) => problems.push(p),
            Err(message) if permissive => {
                log::warn!("{}:{line}: skipping record: {message}", path.display());
            }
            Err(message) => {
                return Err(HarnessError::Dataset {
                    path: path.to_path_buf(),
                    line,
                    message,
                })
            }
        }
    }
    if problems.is_empty() {
        return Err(HarnessError::EmptyDataset(path.to_path_buf()));
    }
    Ok(problems)
}

/// Writes problems in the format [`load_dataset`] reads.
pub fn write_dataset(path: &Path, problems: &[ProblemSpec]) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for p in problems {
        serde_json::to_writer(&mut out, &Record::from(p)).map_err(|e| HarnessError::Serialize(e.to_string()))?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(io_err)
}
