//! Line-level Monte Carlo Tree Search decoding for code generation.
//!
//! A [`tree_search`] over source lines, driven by a pluggable
//! [`generator`] and scored by public tests through an [`evaluator`], plus a
//! [`harness`] that runs whole benchmarks and reports unbiased pass@k.

pub mod evaluator;
pub mod generator;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod tree_search;

pub use evaluator::Evaluator;
pub use model::{CodeBlock, NodeId, ProblemSpec, Reward, SearchConfig, SearchNode, TestCase};
pub use tree_search::{run_search, SearchOutcome};
