//! Line-level Monte Carlo Tree Search with self-refinement.
//!
//! Every node of the tree holds one generated source line. A rollout
//!
//! 1. descends from the root by maximal UCT score to a childless node,
//! 2. asks the generator for `m` completions of that node's context and turns
//!    each into a child (first line = the child's line, the rest = its
//!    supplement, used only to make the child runnable),
//! 3. scores every child by its public-test pass rate,
//! 4. asks for one refined rewrite of every child that scored below the
//!    refine threshold, and of the last child created in the rollout; the
//!    rewrite becomes an extra sibling that does not count toward `m`,
//! 5. adds every reward produced in the rollout to each node from the
//!    expanded leaf up to the root.
//!
//! A newly created node starts with its own evaluation as its first visit,
//! so its UCT score is its reward rather than the unvisited sentinel.
//!
//! After the budget is spent the answer is found by the same UCT descent; if
//! a program passing every public test shows up earlier the search stops and
//! returns it. A run cut short by the generator returns its highest-scoring
//! node instead.

mod tree;
mod uct;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{assemble_program, EvalError, Evaluator};
use crate::generator::{GenerationError, GenerationRequest, Generator, PromptTemplates, RequestKind};
use crate::model::{validate_problem, CodeBlock, ModelError, NodeId, ProblemSpec, Reward, SearchConfig};

pub use tree::{SearchTree, TreeStats};
pub use uct::uct_score;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid problem: {}", .0.join("; "))]
    InvalidProblem(Vec<String>),
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error("evaluation failed: {0}")]
    Evaluation(#[from] EvalError),
}

/// Splits a completion into `(line, supplement)` under `context`.
/// Returns `None` (terminal marker) for an empty or whitespace-only completion.
pub fn segment_completion(context: &[String], completion_text: &str) -> Option<CodeBlock> {
    if completion_text.trim().is_empty() {
        return None;
    }
    let text = completion_text.trim_end_matches(['\n', '\r']);
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l).to_string());
    let line = lines.next()?;
    Some(CodeBlock {
        context: context.to_vec(),
        line,
        supplement: lines.collect(),
    })
}

/// SplitMix64 mixing of the run seed with request coordinates.
fn request_seed(base: u64, rollout: usize, slot: u64) -> u64 {
    let mut z = base ^ (rollout as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ slot.wrapping_mul(0xD1B5_4A32_D192_ED69);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub index: usize,
    pub selected: NodeId,
    pub created: Vec<NodeId>,
    pub refined: Vec<NodeId>,
    /// The last child created in this rollout, which is always refined.
    pub last_in_path: Option<NodeId>,
    /// Rewards backpropagated in this rollout, in order.
    pub rewards: Vec<Reward>,
    /// The selected node could not be expanded and was re-scored instead.
    pub terminal_revisit: bool,
    pub errors: Vec<String>,
    pub early_stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best_node: NodeId,
    pub best_program: String,
    pub best_reward: Reward,
    pub tree_stats: TreeStats,
    pub per_rollout_log: Vec<RolloutRecord>,
    pub early_stopped: bool,
    /// The generator became unavailable before the budget was spent.
    pub degraded: bool,
    pub tree: SearchTree,
}

/// Everything one search needs besides the tree itself.
pub struct LineSearch<'a> {
    problem: &'a ProblemSpec,
    config: &'a SearchConfig,
    generator: &'a dyn Generator,
    evaluator: &'a Evaluator,
    templates: &'a PromptTemplates,
}

impl<'a> LineSearch<'a> {
    pub fn new(
        problem: &'a ProblemSpec,
        config: &'a SearchConfig,
        generator: &'a dyn Generator,
        evaluator: &'a Evaluator,
        templates: &'a PromptTemplates,
    ) -> Self {
        Self {
            problem,
            config,
            generator,
            evaluator,
            templates,
        }
    }

    fn timeout(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.config.eval_timeout_seconds)
    }

    fn evaluate(&self, block: &CodeBlock) -> Result<Reward, SearchError> {
        Ok(self
            .evaluator
            .evaluate_public(block, &self.problem.public_tests, self.timeout())?)
    }

    /// Creates and scores up to `m` children under `leaf`.
    ///
    /// The outer `Result` carries infrastructure failures that end the run;
    /// the inner one a generator failure that only aborts this expansion,
    /// leaving the tree untouched.
    pub fn expand(
        &self,
        tree: &mut SearchTree,
        leaf: NodeId,
        rollout: usize,
    ) -> Result<Result<Vec<(NodeId, Reward)>, GenerationError>, SearchError> {
        let node = tree.node(leaf)?;
        if node.is_terminal {
            return Ok(Ok(Vec::new()));
        }
        if tree.non_refined_children(leaf)? > 0 {
            return Err(SearchError::Contract(format!("{leaf} is already expanded")));
        }
        if node.depth >= self.config.max_depth {
            tree.mark_terminal(leaf)?;
            return Ok(Ok(Vec::new()));
        }

        let context = tree.materialize_context(leaf)?;
        let prompt = self.templates.build_generation_prompt(self.problem, &context);
        let m = self.config.max_children;
        let mut completions = Vec::with_capacity(m);
        let mut chunk = 0u64;
        while completions.len() < m {
            let want = (m - completions.len()).min(self.config.samples_per_completion_request);
            let request = GenerationRequest {
                prompt_text: prompt.clone(),
                num_samples: want,
                stop_sequences: self.config.stop_sequences.clone(),
                temperature: self.config.expansion_temperature,
                seed: request_seed(self.config.rng_seed, rollout, chunk),
                context: context.clone(),
                kind: RequestKind::Expand,
            };
            let batch = match self.generator.generate(&request) {
                Ok(batch) => batch,
                Err(err) => return Ok(Err(err)),
            };
            let got = batch.len();
            completions.extend(batch.into_iter().take(want));
            chunk += 1;
            if got < want {
                break;
            }
        }

        let mut seen: Vec<String> = tree
            .node(leaf)?
            .children
            .iter()
            .filter_map(|&c| tree.node(c).ok())
            .filter(|c| !c.is_refined)
            .filter_map(|c| c.line().map(str::to_string))
            .collect();
        let mut blocks = Vec::new();
        for text in &completions {
            let Some(block) = segment_completion(&context, text) else {
                continue;
            };
            if seen.contains(&block.line) || blocks.len() >= m {
                continue;
            }
            seen.push(block.line.clone());
            blocks.push(block);
        }

        if blocks.is_empty() {
            tree.mark_terminal(leaf)?;
            return Ok(Ok(Vec::new()));
        }
        let mut created = Vec::with_capacity(blocks.len());
        for block in blocks {
            let reward = self.evaluate(&block)?;
            let id = tree.add_child(leaf, block, None)?;
            tree.record_evaluation(id, reward)?;
            created.push((id, reward));
        }
        Ok(Ok(created))
    }

    /// Adds one refined sibling of `child` when its reward is below the
    /// threshold or it is the last node of the rollout's path.
    pub fn self_refine(
        &self,
        tree: &mut SearchTree,
        child: NodeId,
        reward: Reward,
        is_last_in_path: bool,
        rollout: usize,
    ) -> Result<Result<Option<(NodeId, Reward)>, GenerationError>, SearchError> {
        if !(reward.value() < self.config.refine_threshold || is_last_in_path) {
            return Ok(Ok(None));
        }
        let node = tree.node(child)?;
        let parent = node
            .parent_id
            .ok_or_else(|| SearchError::Contract("the root cannot be refined".into()))?;
        let block = node
            .block
            .clone()
            .ok_or_else(|| SearchError::Contract(format!("{child} has no code block")))?;
        let request = GenerationRequest {
            prompt_text: self.templates.build_refine_prompt(self.problem, &block, &reward),
            num_samples: 1,
            stop_sequences: self.config.stop_sequences.clone(),
            temperature: self.config.refine_temperature,
            seed: request_seed(self.config.rng_seed, rollout, 1 << 32 | u64::from(child.0)),
            context: block.context.clone(),
            kind: RequestKind::Refine {
                faulty_line: block.line.clone(),
            },
        };
        let completions = match self.generator.generate(&request) {
            Ok(c) => c,
            Err(err) => return Ok(Err(err)),
        };
        let Some(refined) = completions
            .first()
            .and_then(|text| segment_completion(&block.context, text))
        else {
            return Ok(Ok(None));
        };
        let refined_reward = self.evaluate(&refined)?;
        let id = tree.add_child(parent, refined, Some(child))?;
        tree.record_evaluation(id, refined_reward)?;
        Ok(Ok(Some((id, refined_reward))))
    }

    pub fn run(&self) -> Result<SearchOutcome, SearchError> {
        self.config.validate()?;
        let violations = validate_problem(self.problem);
        if !violations.is_empty() {
            return Err(SearchError::InvalidProblem(violations));
        }

        let mut tree = SearchTree::new(self.problem.starter_context.clone());
        let mut log = Vec::with_capacity(self.config.max_rollouts);
        let mut consecutive_failures = 0usize;
        let mut degraded = false;
        let mut perfect: Option<NodeId> = None;

        for index in 0..self.config.max_rollouts {
            let leaf = tree.select_leaf(self.config);
            let mut record = RolloutRecord {
                index,
                selected: leaf,
                created: Vec::new(),
                refined: Vec::new(),
                last_in_path: None,
                rewards: Vec::new(),
                terminal_revisit: false,
                errors: Vec::new(),
                early_stop: false,
            };

            let created = if tree.node(leaf)?.is_terminal {
                Vec::new()
            } else {
                match self.expand(&mut tree, leaf, index)? {
                    Ok(created) => {
                        consecutive_failures = 0;
                        created
                    }
                    Err(err) => {
                        log::warn!("{}: expansion of {leaf} failed: {err}", self.problem.task_id);
                        record.errors.push(err.to_string());
                        consecutive_failures += 1;
                        log.push(record);
                        if err.is_permanent() || consecutive_failures >= self.config.max_generator_failures {
                            degraded = true;
                            break;
                        }
                        continue;
                    }
                }
            };

            if created.is_empty() {
                // Nothing left to expand below this node: re-score it.
                match tree.node(leaf)?.reward {
                    Some(own) => {
                        record.terminal_revisit = true;
                        record.rewards.push(own);
                        tree.backpropagate(leaf, &record.rewards)?;
                        log.push(record);
                        continue;
                    }
                    None => {
                        // The root produced no children at all.
                        log.push(record);
                        break;
                    }
                }
            }

            let last = created.len() - 1;
            record.last_in_path = Some(created[last].0);
            let mut refined_rewards = Vec::new();
            for (i, &(child, reward)) in created.iter().enumerate() {
                record.created.push(child);
                record.rewards.push(reward);
                match self.self_refine(&mut tree, child, reward, i == last, index)? {
                    Ok(Some((id, r))) => {
                        record.refined.push(id);
                        refined_rewards.push(r);
                    }
                    Ok(None) => {}
                    Err(err) => {
                        log::warn!("{}: refinement of {child} failed: {err}", self.problem.task_id);
                        record.errors.push(err.to_string());
                    }
                }
            }
            record.rewards.extend(refined_rewards);
            tree.backpropagate(leaf, &record.rewards)?;

            if self.config.early_stop {
                perfect = record
                    .created
                    .iter()
                    .chain(&record.refined)
                    .copied()
                    .filter(|&id| {
                        tree.node(id)
                            .ok()
                            .and_then(|n| n.reward)
                            .is_some_and(|r| r.is_perfect())
                    })
                    .min();
                if perfect.is_some() {
                    record.early_stop = true;
                    log.push(record);
                    break;
                }
            }
            log.push(record);
        }

        let best_node = match perfect {
            Some(id) => id,
            None if degraded => tree.best_evaluated().unwrap_or(NodeId::ROOT),
            None => tree.best_path(self.config),
        };
        let node = tree.node(best_node)?;
        let (best_program, best_reward) = match (&node.block, node.reward) {
            (Some(block), Some(reward)) => (assemble_program(block), reward),
            _ => {
                let source = tree
                    .starter_context()
                    .iter()
                    .map(|l| format!("{l}\n"))
                    .collect::<String>();
                let reward = self
                    .evaluator
                    .evaluate_source(&source, &self.problem.public_tests, self.timeout())?
                    .reward;
                (source, reward)
            }
        };

        Ok(SearchOutcome {
            best_node,
            best_program,
            best_reward,
            tree_stats: tree.stats(),
            per_rollout_log: log,
            early_stopped: perfect.is_some(),
            degraded,
            tree,
        })
    }
}

/// Runs one search with the default prompt templates.
pub fn run_search(
    problem: &ProblemSpec,
    config: &SearchConfig,
    generator: &dyn Generator,
    evaluator: &Evaluator,
) -> Result<SearchOutcome, SearchError> {
    let templates = PromptTemplates::default();
    LineSearch::new(problem, config, generator, evaluator, &templates).run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation_splits_first_line() {
        let b = segment_completion(&[], "a\nb\nc").unwrap();
        assert_eq!(b.line, "a");
        assert_eq!(b.supplement, vec!["b", "c"]);
        assert!(b.context.is_empty());

        let sig = vec!["def f():".to_string()];
        let b = segment_completion(&sig, "return 1").unwrap();
        assert_eq!(
            (b.line.as_str(), b.supplement.len(), b.context.clone()),
            ("return 1", 0, sig.clone())
        );

        assert!(segment_completion(&sig, "").is_none());
        assert!(segment_completion(&sig, "  \n\t\n").is_none());
    }

    #[test]
    fn segmentation_keeps_blank_and_comment_lines() {
        let b = segment_completion(&[], "\n# note\nx = 1\n").unwrap();
        assert_eq!(b.line, "");
        assert_eq!(b.supplement, vec!["# note", "x = 1"]);
        let crlf = segment_completion(&[], "a\r\nb\r\n").unwrap();
        assert_eq!(
            (crlf.line.as_str(), crlf.supplement.clone()),
            ("a", vec!["b".to_string()])
        );
    }

    #[test]
    fn request_seeds_differ_by_coordinate() {
        let a = request_seed(1, 0, 0);
        assert_ne!(a, request_seed(1, 1, 0));
        assert_ne!(a, request_seed(1, 0, 1));
        assert_ne!(a, request_seed(2, 0, 0));
        assert_eq!(a, request_seed(1, 0, 0));
    }
}
