//! Benchmark harness: dataset ingestion, experiment orchestration and
//! reporting.

mod dataset;
mod experiment;
mod report;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::evaluator::EvalError;
use crate::generator::PromptError;
use crate::metrics::MetricsError;
use crate::tree_search::SearchError;

pub use dataset::{load_dataset, write_dataset};
pub use experiment::{
    run_experiment, run_experiment_with, sample_seed, EvaluatorSettings, GeneratorFactory, GeneratorSettings,
    RunManifest, Strategy, TemplatePaths,
};
pub use report::{render_report, render_table, ExperimentReport, ProblemOutcome, RenderedReport, SampleOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: no valid records", .0.display())]
    EmptyDataset(PathBuf),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{task_id}: {message}")]
    Setup { task_id: String, message: String },
    #[error("{task_id} sample {sample}: {source}")]
    Search {
        task_id: String,
        sample: usize,
        #[source]
        source: SearchError,
    },
    #[error(transparent)]
    Evaluation(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("serialization: {0}")]
    Serialize(String),
}
