use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{ExperimentReport, ProblemOutcome, SampleOutcome};
use super::{load_dataset, HarnessError};
use crate::evaluator::{Evaluator, ShimImage, ShimSandbox};
use crate::generator::{Generator, HttpConfig, HttpGenerator, MockGrammarGenerator, PromptTemplates};
use crate::model::{ProblemSpec, SearchConfig};
use crate::tree_search::{LineSearch, SearchOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LsrMcts,
    /// One expansion of the root and no further search.
    DirectSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSettings {
    /// Draws from each problem's `synthetic_grammar`.
    Mock,
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorSettings {
    Synthetic,
    Shim { command: Vec<String>, memory_limit_mb: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatePaths {
    pub generation: PathBuf,
    pub refine: PathBuf,
}

/// Everything that determines an experiment's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_path: PathBuf,
    pub strategy: Strategy,
    pub config: SearchConfig,
    pub generator_settings: GeneratorSettings,
    #[serde(default = "default_evaluator")]
    pub evaluator: EvaluatorSettings,
    /// The `n` of pass@k.
    pub samples_per_problem: usize,
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub templates: Option<TemplatePaths>,
    /// Worker threads; `None` uses one per core.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub permissive: bool,
}

fn default_evaluator() -> EvaluatorSettings {
    EvaluatorSettings::Synthetic
}

impl RunManifest {
    pub fn new(dataset_path: impl Into<PathBuf>, samples_per_problem: usize, k_values: Vec<usize>) -> Self {
        Self {
            dataset_path: dataset_path.into(),
            strategy: Strategy::LsrMcts,
            config: SearchConfig::default(),
            generator_settings: GeneratorSettings::Mock,
            evaluator: EvaluatorSettings::Synthetic,
            samples_per_problem,
            k_values,
            output_path: None,
            cache_dir: None,
            templates: None,
            workers: None,
            permissive: false,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Manifest(m));
        if self.k_values.is_empty() {
            return bad("k_values is empty".into());
        }
        if self.k_values.contains(&0) {
            return bad("k values must be >= 1".into());
        }
        let max_k = self.k_values.iter().copied().max().unwrap_or(0);
        if self.samples_per_problem < max_k {
            return bad(format!(
                "samples_per_problem = {} is below the largest k = {max_k}",
                self.samples_per_problem
            ));
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        if let EvaluatorSettings::Shim { command, .. } = &self.evaluator {
            if command.is_empty() {
                return bad("shim command is empty".into());
            }
        }
        self.effective_config()
            .validate()
            .map_err(|e| HarnessError::Manifest(e.to_string()))
    }

    /// The search configuration after applying the strategy.
    pub fn effective_config(&self) -> SearchConfig {
        let mut config = self.config.clone();
        if self.strategy == Strategy::DirectSampling {
            config.max_rollouts = 1;
        }
        config
    }

    /// Hash of every field that influences a sample's result.
    fn fingerprint(&self) -> String {
        let relevant = (
            self.strategy,
            self.effective_config(),
            &self.generator_settings,
            &self.evaluator,
            &self.templates,
        );
        let json = serde_json::to_vec(&relevant).expect("manifest fields serialize");
        hex::encode(Sha256::digest(json))
    }
}

/// Seed for one independent sample of one problem.
pub fn sample_seed(base: u64, task_id: &str, sample: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update((task_id.len() as u64).to_le_bytes());
    hasher.update(task_id.as_bytes());
    hasher.update((sample as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Supplies the generator used for a problem's samples.
pub trait GeneratorFactory: Sync {
    fn for_problem(&self, problem: &ProblemSpec) -> Result<Arc<dyn Generator>, HarnessError>;
}

impl<F> GeneratorFactory for F
where
    F: Fn(&ProblemSpec) -> Result<Arc<dyn Generator>, HarnessError> + Sync,
{
    fn for_problem(&self, problem: &ProblemSpec) -> Result<Arc<dyn Generator>, HarnessError> {
        self(problem)
    }
}

enum SettingsFactory {
    Mock,
    Http(Arc<dyn Generator>),
}

impl GeneratorFactory for SettingsFactory {
    fn for_problem(&self, problem: &ProblemSpec) -> Result<Arc<dyn Generator>, HarnessError> {
        match self {
            SettingsFactory::Http(generator) => Ok(Arc::clone(generator)),
            SettingsFactory::Mock => {
                let grammar = problem.synthetic_grammar.clone().ok_or_else(|| HarnessError::Setup {
                    task_id: problem.task_id.clone(),
                    message: "the mock generator needs a synthetic_grammar".into(),
                })?;
                Ok(Arc::new(MockGrammarGenerator::new(grammar)))
            }
        }
    }
}

/// Artifact persisted per finished sample; doubles as the resume checkpoint.
#[derive(Debug, Serialize, Deserialize)]
struct SampleArtifact {
    fingerprint: String,
    task_id: String,
    sample: usize,
    seed: u64,
    outcome: SampleOutcome,
    rollouts: usize,
    early_stopped: bool,
    node_count: usize,
    refined_node_count: usize,
    max_depth: u32,
}

fn artifact_path(dir: &Path, task_id: &str, sample: usize) -> PathBuf {
    let id = hex::encode(Sha256::digest(task_id.as_bytes()));
    dir.join(format!("{}-{sample}.json", &id[..16]))
}

fn load_artifact(path: &Path, fingerprint: &str, task_id: &str, sample: usize) -> Option<SampleOutcome> {
    let text = fs::read_to_string(path).ok()?;
    let artifact: SampleArtifact = serde_json::from_str(&text).ok()?;
    (artifact.fingerprint == fingerprint && artifact.task_id == task_id && artifact.sample == sample)
        .then_some(artifact.outcome)
}

fn store_artifact(path: &Path, artifact: &SampleArtifact) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let json = serde_json::to_vec_pretty(artifact).map_err(|e| HarnessError::Serialize(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, json).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// Loads the dataset, builds the generator and evaluator the manifest names
/// and runs the experiment.
pub fn run_experiment(manifest: &RunManifest) -> Result<ExperimentReport, HarnessError> {
    manifest.validate()?;
    let factory = match &manifest.generator_settings {
        GeneratorSettings::Mock => SettingsFactory::Mock,
        GeneratorSettings::Http(config) => {
            SettingsFactory::Http(Arc::new(HttpGenerator::new(config.clone().with_env_key())))
        }
    };
    let evaluator = match &manifest.evaluator {
        EvaluatorSettings::Synthetic => Evaluator::synthetic(),
        EvaluatorSettings::Shim {
            command,
            memory_limit_mb,
        } => Evaluator::new(
            ShimSandbox::new(ShimImage {
                command: command.clone(),
            })?
            .with_memory_limit_mb(*memory_limit_mb),
        ),
    };
    let evaluator = match &manifest.cache_dir {
        Some(dir) => evaluator.with_cache_dir(dir.join("evaluations"))?,
        None => evaluator,
    };
    let problems = load_dataset(&manifest.dataset_path, manifest.permissive)?;
    run_experiment_with(manifest, &problems, &factory, &evaluator)
}

/// Runs every `(problem, sample)` search and aggregates pass@k.
///
/// Samples whose generator became unavailable are left out and the report is
/// marked incomplete; rerunning with the same cache directory fills them in.
pub fn run_experiment_with(
    manifest: &RunManifest,
    problems: &[ProblemSpec],
    generators: &dyn GeneratorFactory,
    evaluator: &Evaluator,
) -> Result<ExperimentReport, HarnessError> {
    manifest.validate()?;
    let templates = match &manifest.templates {
        Some(paths) => PromptTemplates::from_files(&paths.generation, &paths.refine)?,
        None => PromptTemplates::default(),
    };
    let samples_dir = match &manifest.cache_dir {
        Some(dir) => {
            let dir = dir.join("samples");
            fs::create_dir_all(&dir).map_err(|source| HarnessError::Io {
                path: dir.clone(),
                source,
            })?;
            Some(dir)
        }
        None => None,
    };
    let fingerprint = manifest.fingerprint();
    let base_config = manifest.effective_config();
    let n = manifest.samples_per_problem;

    let generators_per_problem = problems
        .iter()
        .map(|p| generators.for_problem(p))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..problems.len()).flat_map(|p| (0..n).map(move |s| (p, s))).collect();

    let run_job = |&(p, s): &(usize, usize)| -> Result<Option<SampleOutcome>, HarnessError> {
        let problem = &problems[p];
        let path = samples_dir.as_ref().map(|d| artifact_path(d, &problem.task_id, s));
        if let Some(done) = path
            .as_ref()
            .and_then(|path| load_artifact(path, &fingerprint, &problem.task_id, s))
        {
            return Ok(Some(done));
        }
        let mut config = base_config.clone();
        config.rng_seed = sample_seed(base_config.rng_seed, &problem.task_id, s);
        let generator = generators_per_problem[p].as_ref();
        let outcome: SearchOutcome = LineSearch::new(problem, &config, generator, evaluator, &templates)
            .run()
            .map_err(|source| HarnessError::Search {
                task_id: problem.task_id.clone(),
                sample: s,
                source,
            })?;
        if outcome.degraded {
            log::warn!(
                "{} sample {s}: generator unavailable, sample left for a later run",
                problem.task_id
            );
            return Ok(None);
        }
        let timeout = Duration::from_secs_f64(config.eval_timeout_seconds);
        let private_pass = evaluator.evaluate_private(&outcome.best_program, &problem.private_tests, timeout)?;
        let sample = SampleOutcome {
            program: outcome.best_program.clone(),
            public_reward: outcome.best_reward.value(),
            private_pass,
        };
        if let Some(path) = &path {
            store_artifact(
                path,
                &SampleArtifact {
                    fingerprint: fingerprint.clone(),
                    task_id: problem.task_id.clone(),
                    sample: s,
                    seed: config.rng_seed,
                    outcome: sample.clone(),
                    rollouts: outcome.per_rollout_log.len(),
                    early_stopped: outcome.early_stopped,
                    node_count: outcome.tree_stats.node_count,
                    refined_node_count: outcome.tree_stats.refined_node_count,
                    max_depth: outcome.tree_stats.max_depth,
                },
            )?;
        }
        Ok(Some(sample))
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(workers) = manifest.workers {
        builder = builder.num_threads(workers);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::Manifest(format!("worker pool: {e}")))?;
    let results: Vec<Option<SampleOutcome>> =
        pool.install(|| jobs.par_iter().map(run_job).collect::<Result<_, _>>())?;

    let mut complete = true;
    let mut per_problem = Vec::with_capacity(problems.len());
    let mut results = results.into_iter();
    for problem in problems {
        let mut samples = Vec::with_capacity(n);
        for sample in results.by_ref().take(n) {
            match sample {
                Some(s) => samples.push(s),
                None => complete = false,
            }
        }
        per_problem.push(ProblemOutcome {
            task_id: problem.task_id.clone(),
            samples,
        });
    }
    ExperimentReport::assemble(manifest.clone(), complete, per_problem)
}
