//! Domain types shared by the search engine, generators, evaluators and the
//! benchmark harness.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthetic::GrammarSpec;

/// Errors raised when a value would violate one of the model invariants.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("reward total must be positive")]
    EmptyTestSet,
    #[error("passed count {passed} exceeds total {total}")]
    PassedExceedsTotal { passed: u32, total: u32 },
    #[error("failure kind {kind} is inconsistent with {passed}/{total} passed")]
    InconsistentFailureKind { kind: FailureKind, passed: u32, total: u32 },
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
}

/// A single assertion statement referencing the entry point,
/// e.g. `assert add(1, 2) == 3`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TestCase {
    pub assertion_source: String,
}

impl TestCase {
    pub fn new(assertion_source: impl Into<String>) -> Self {
        Self {
            assertion_source: assertion_source.into(),
        }
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub task_id: String,
    pub nl_description: String,
    #[serde(default)]
    pub starter_context: Vec<String>,
    pub public_tests: Vec<TestCase>,
    pub private_tests: Vec<TestCase>,
    pub entry_point: String,
    /// Line grammar for offline runs against the mock generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_grammar: Option<GrammarSpec>,
}

/// Checks every [`ProblemSpec`] invariant that can be decided from the item
/// alone. Uniqueness of `task_id` is checked at dataset level.
pub fn validate_problem(spec: &ProblemSpec) -> Vec<String> {
    let mut violations = Vec::new();
    if spec.task_id.trim().is_empty() {
        violations.push("task_id empty".to_string());
    }
    if spec.public_tests.is_empty() {
        violations.push("public_tests empty".to_string());
    }
    if spec.entry_point.trim().is_empty() {
        violations.push("entry_point empty".to_string());
    }
    for (i, test) in spec.public_tests.iter().chain(&spec.private_tests).enumerate() {
        let src = test.assertion_source.trim();
        if src.is_empty() {
            violations.push(format!("test #{i} is empty"));
        } else if src.contains('\n') {
            violations.push(format!("test #{i} spans multiple lines"));
        }
    }
    if spec.starter_context.iter().any(|l| l.contains('\n')) {
        violations.push("starter_context line contains a line separator".to_string());
    }
    violations
}

/// The (context, line, supplement) decomposition of a complete candidate
/// program. `context + [line] + supplement` is the program that gets run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeBlock {
    pub context: Vec<String>,
    pub line: String,
    pub supplement: Vec<String>,
}

impl CodeBlock {
    pub fn lines(&self) -> impl Iterator<Item = &str> {
        self.context
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.line.as_str()))
            .chain(self.supplement.iter().map(String::as_str))
    }
}

/// Index of a node inside its [`crate::tree_search::SearchTree`]. Ids are
/// assigned in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub node_id: NodeId,
    pub parent_id: Option<NodeId>,
    /// `None` only for the root, which holds no generated line.
    pub block: Option<CodeBlock>,
    /// Cumulative backpropagated reward.
    pub values: f64,
    pub visits: u64,
    pub children: Vec<NodeId>,
    pub is_refined: bool,
    pub is_terminal: bool,
    pub depth: u32,
    /// The sibling this node was refined from.
    pub refined_from: Option<NodeId>,
    /// The node's own evaluation, recorded when it was created.
    pub reward: Option<Reward>,
}

impl SearchNode {
    pub fn root() -> Self {
        Self {
            node_id: NodeId::ROOT,
            parent_id: None,
            block: None,
            values: 0.0,
            visits: 0,
            children: Vec::new(),
            is_refined: false,
            is_terminal: false,
            depth: 0,
            refined_from: None,
            reward: None,
        }
    }

    pub fn line(&self) -> Option<&str> {
        self.block.as_ref().map(|b| b.line.as_str())
    }

    pub fn mean_value(&self) -> Option<f64> {
        (self.visits > 0).then(|| self.values / self.visits as f64)
    }
}

/// Search hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Exploration weight `c` of the UCT score.
    pub uct_c: f64,
    /// Cap `m` on non-refined children per node.
    pub max_children: usize,
    /// Rollout budget `n`.
    pub max_rollouts: usize,
    pub refine_threshold: f64,
    pub max_depth: u32,
    pub eval_timeout_seconds: f64,
    /// How many of the `m` expansion samples go into one generator request.
    pub samples_per_completion_request: usize,
    pub rng_seed: u64,
    /// Stop as soon as any node passes every public test.
    pub early_stop: bool,
    pub expansion_temperature: f64,
    pub refine_temperature: f64,
    pub stop_sequences: Vec<String>,
    /// Consecutive failed generator calls after which the run is abandoned.
    pub max_generator_failures: usize,
    /// Exploration weight for the final answer descent; `None` reuses `uct_c`.
    pub final_descent_c: Option<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            uct_c: 4.0,
            max_children: 3,
            max_rollouts: 100,
            refine_threshold: 0.5,
            max_depth: 64,
            eval_timeout_seconds: 10.0,
            samples_per_completion_request: 3,
            rng_seed: 0,
            early_stop: true,
            expansion_temperature: 0.8,
            refine_temperature: 0.2,
            stop_sequences: Vec::new(),
            max_generator_failures: 3,
            final_descent_c: None,
        }
    }
}

impl SearchConfig {
    pub fn builder() -> SearchConfigBuilder {
        SearchConfigBuilder {
            config: SearchConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if !(self.uct_c.is_finite() && self.uct_c >= 0.0) {
            return bad(format!("uct_c must be finite and >= 0, got {}", self.uct_c));
        }
        if !(0.0..=1.0).contains(&self.refine_threshold) {
            return bad(format!(
                "refine_threshold must lie in [0, 1], got {}",
                self.refine_threshold
            ));
        }
        if self.max_children == 0 {
            return bad("max_children must be >= 1".into());
        }
        if self.max_rollouts == 0 {
            return bad("max_rollouts must be >= 1".into());
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1".into());
        }
        if !(self.eval_timeout_seconds.is_finite() && self.eval_timeout_seconds > 0.0) {
            return bad("eval_timeout_seconds must be > 0".into());
        }
        if self.samples_per_completion_request == 0 {
            return bad("samples_per_completion_request must be >= 1".into());
        }
        if !(self.expansion_temperature >= 0.0 && self.refine_temperature >= 0.0) {
            return bad("temperatures must be >= 0".into());
        }
        if let Some(c) = self.final_descent_c {
            if !(c.is_finite() && c >= 0.0) {
                return bad(format!("final_descent_c must be finite and >= 0, got {c}"));
            }
        }
        if self.max_generator_failures == 0 {
            return bad("max_generator_failures must be >= 1".into());
        }
        Ok(())
    }
}

/// Builder that validates on [`SearchConfigBuilder::build`].
#[derive(Debug, Clone)]
pub struct SearchConfigBuilder {
    config: SearchConfig,
}

macro_rules! setter {
    ($name:ident, $ty:ty) => {
        pub fn $name(mut self, value: $ty) -> Self {
            self.config.$name = value;
            self
        }
    };
}

impl SearchConfigBuilder {
    setter!(uct_c, f64);
    setter!(max_children, usize);
    setter!(max_rollouts, usize);
    setter!(refine_threshold, f64);
    setter!(max_depth, u32);
    setter!(eval_timeout_seconds, f64);
    setter!(samples_per_completion_request, usize);
    setter!(rng_seed, u64);
    setter!(early_stop, bool);
    setter!(expansion_temperature, f64);
    setter!(refine_temperature, f64);
    setter!(stop_sequences, Vec<String>);
    setter!(max_generator_failures, usize);
    setter!(final_descent_c, Option<f64>);

    pub fn build(self) -> Result<SearchConfig, ModelError> {
        self.config.validate()?;
        Ok(self.config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    None,
    TestFailure,
    RuntimeError,
    ParseError,
    Timeout,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::None => "none",
            FailureKind::TestFailure => "test_failure",
            FailureKind::RuntimeError => "runtime_error",
            FailureKind::ParseError => "parse_error",
            FailureKind::Timeout => "timeout",
        })
    }
}

/// Fraction of public tests passed by one program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawReward")]
pub struct Reward {
    value: f64,
    passed: u32,
    total: u32,
    failure_kind: FailureKind,
}

#[derive(Deserialize)]
struct RawReward {
    #[allow(dead_code)]
    value: f64,
    passed: u32,
    total: u32,
    failure_kind: FailureKind,
}

impl TryFrom<RawReward> for Reward {
    type Error = ModelError;

    fn try_from(raw: RawReward) -> Result<Self, Self::Error> {
        Reward::new(raw.passed, raw.total, raw.failure_kind)
    }
}

impl Reward {
    /// `failure_kind` must be `None` exactly when every test passed.
    pub fn new(passed: u32, total: u32, failure_kind: FailureKind) -> Result<Self, ModelError> {
        if total == 0 {
            return Err(ModelError::EmptyTestSet);
        }
        if passed > total {
            return Err(ModelError::PassedExceedsTotal { passed, total });
        }
        if (failure_kind == FailureKind::None) != (passed == total) {
            return Err(ModelError::InconsistentFailureKind {
                kind: failure_kind,
                passed,
                total,
            });
        }
        Ok(Self {
            value: f64::from(passed) / f64::from(total),
            passed,
            total,
            failure_kind,
        })
    }

    /// Builds a reward from counts, using `on_failure` when not all passed.
    pub fn from_counts(passed: u32, total: u32, on_failure: FailureKind) -> Result<Self, ModelError> {
        let kind = if passed == total { FailureKind::None } else { on_failure };
        Self::new(passed, total, kind)
    }

    /// A zero score for a program that could not be run at all.
    pub fn zero(total: u32, kind: FailureKind) -> Result<Self, ModelError> {
        Self::new(0, total, kind)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn passed(&self) -> u32 {
        self.passed
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn failure_kind(&self) -> FailureKind {
        self.failure_kind
    }

    pub fn is_perfect(&self) -> bool {
        self.passed == self.total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    /// Samples generated.
    pub n: usize,
    /// Samples passing every private test.
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKReport {
    pub per_problem: BTreeMap<String, SampleCounts>,
    pub k_values: Vec<usize>,
    pub estimates: BTreeMap<usize, f64>,
}
