//! Scoring candidate programs against public and private tests.
//!
//! An [`Evaluator`] wraps a [`Sandbox`] backend and memoizes results by a
//! content hash of the assembled program plus a fingerprint of the test set.
//! Two backends are provided: [`SyntheticSandbox`] runs the toy grammar in
//! process, [`ShimSandbox`] runs real programs in a child process speaking the
//! JSON shim protocol.

mod shim;

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{CodeBlock, ModelError, Reward, TestCase};
use crate::synthetic;

pub use shim::{ShimImage, ShimRequest, ShimResponse, ShimSandbox, STDERR_EXCERPT_LIMIT};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no tests to evaluate against")]
    NoTests,
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("sandbox protocol violation: {0}")]
    Protocol(String),
    #[error("invalid reward from sandbox: {0}")]
    Reward(#[from] ModelError),
    #[error("evaluation cache: {0}")]
    Cache(#[from] io::Error),
}

/// Joins `context + [line] + supplement`, one separator after every line.
pub fn assemble_program(block: &CodeBlock) -> String {
    let mut out = String::new();
    for line in block.lines() {
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Inverse of [`assemble_program`] on line lists.
pub fn split_program(source: &str) -> Vec<String> {
    source
        .strip_suffix('\n')
        .unwrap_or(source)
        .split('\n')
        .map(str::to_string)
        .collect()
}

/// Raw result of one sandbox run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionReport {
    pub reward: Reward,
    pub stderr_excerpt: String,
}

/// Runs a program against assertions and reports the pass count.
pub trait Sandbox: Send + Sync {
    fn run(&self, program: &str, tests: &[TestCase], timeout: Duration) -> Result<ExecutionReport, EvalError>;
}

/// In-process backend for synthetic grammar programs.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticSandbox;

impl Sandbox for SyntheticSandbox {
    fn run(&self, program: &str, tests: &[TestCase], _timeout: Duration) -> Result<ExecutionReport, EvalError> {
        if tests.is_empty() {
            return Err(EvalError::NoTests);
        }
        let run = synthetic::run_synthetic(program, tests);
        Ok(ExecutionReport {
            reward: run.reward,
            stderr_excerpt: truncate_excerpt(&run.messages.join("\n")),
        })
    }
}

pub(crate) fn truncate_excerpt(text: &str) -> String {
    if text.len() <= STDERR_EXCERPT_LIMIT {
        return text.to_string();
    }
    let mut end = STDERR_EXCERPT_LIMIT;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    text[..end].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub program_hash: String,
    pub tests_fingerprint: String,
    pub reward: Reward,
    pub wall_time: f64,
    pub stderr_excerpt: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tests_fingerprint(tests: &[TestCase], timeout: Duration) -> String {
    let mut hasher = Sha256::new();
    for t in tests {
        hasher.update((t.assertion_source.len() as u64).to_le_bytes());
        hasher.update(t.assertion_source.as_bytes());
    }
    hasher.update(timeout.as_millis().to_le_bytes());
    hex::encode(hasher.finalize())
}

pub struct Evaluator {
    sandbox: Box<dyn Sandbox>,
    cache_enabled: bool,
    cache: RwLock<HashMap<String, EvaluationRecord>>,
    persist_dir: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator")
            .field("cache_enabled", &self.cache_enabled)
            .field("persist_dir", &self.persist_dir)
            .field("stats", &self.stats())
            .finish_non_exhaustive()
    }
}

impl Evaluator {
    pub fn new(sandbox: impl Sandbox + 'static) -> Self {
        Self {
            sandbox: Box::new(sandbox),
            cache_enabled: true,
            cache: RwLock::new(HashMap::new()),
            persist_dir: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn synthetic() -> Self {
        Self::new(SyntheticSandbox)
    }

    pub fn without_cache(mut self) -> Self {
        self.cache_enabled = false;
        self
    }

    /// Persists every record as `<dir>/<program_hash>.<fingerprint>.json`.
    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        self.persist_dir = Some(dir);
        Ok(self)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    fn disk_path(&self, program_hash: &str, fingerprint: &str) -> Option<PathBuf> {
        self.persist_dir
            .as_ref()
            .map(|d| d.join(format!("{program_hash}.{}.json", &fingerprint[..16])))
    }

    fn lookup(&self, key: &str, program_hash: &str, fingerprint: &str) -> Option<EvaluationRecord> {
        if let Some(hit) = self.cache.read().expect("cache lock poisoned").get(key) {
            return Some(hit.clone());
        }
        let path = self.disk_path(program_hash, fingerprint)?;
        let record: EvaluationRecord = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
        (record.tests_fingerprint == fingerprint).then_some(record)
    }

    pub fn evaluate_source(
        &self,
        program: &str,
        tests: &[TestCase],
        timeout: Duration,
    ) -> Result<EvaluationRecord, EvalError> {
        if tests.is_empty() {
            return Err(EvalError::NoTests);
        }
        let program_hash = sha256_hex(program.as_bytes());
        let fingerprint = tests_fingerprint(tests, timeout);
        let key = format!("{program_hash}:{fingerprint}");
        if self.cache_enabled {
            if let Some(record) = self.lookup(&key, &program_hash, &fingerprint) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                self.cache
                    .write()
                    .expect("cache lock poisoned")
                    .insert(key, record.clone());
                return Ok(record);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let started = Instant::now();
        let report = self.sandbox.run(program, tests, timeout)?;
        let record = EvaluationRecord {
            program_hash,
            tests_fingerprint: fingerprint,
            reward: report.reward,
            wall_time: started.elapsed().as_secs_f64(),
            stderr_excerpt: report.stderr_excerpt,
        };
        if self.cache_enabled {
            if let Some(path) = self.disk_path(&record.program_hash, &record.tests_fingerprint) {
                let json = serde_json::to_string(&record).map_err(io::Error::other)?;
                static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);
                let unique = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
                let tmp = path.with_extension(format!("{}.{unique}.tmp", std::process::id()));
                fs::write(&tmp, json)?;
                fs::rename(tmp, path)?;
            }
            self.cache
                .write()
                .expect("cache lock poisoned")
                .insert(key, record.clone());
        }
        Ok(record)
    }

    /// Pass fraction of the public tests.
    pub fn evaluate_public(
        &self,
        block: &CodeBlock,
        tests: &[TestCase],
        timeout: Duration,
    ) -> Result<Reward, EvalError> {
        Ok(self.evaluate_source(&assemble_program(block), tests, timeout)?.reward)
    }

    /// True iff every private test passes.
    pub fn evaluate_private(&self, program: &str, tests: &[TestCase], timeout: Duration) -> Result<bool, EvalError> {
        Ok(self.evaluate_source(program, tests, timeout)?.reward.is_perfect())
    }
}
