#![allow(dead_code)]

use lsr_mcts::model::{NodeId, ProblemSpec, SearchConfig};
use lsr_mcts::synthetic::{interpret_synthetic, synthetic_problem, SyntheticOptions};
use lsr_mcts::tree_search::{SearchOutcome, SearchTree};

pub fn oracle_problems(count: u64) -> Vec<ProblemSpec> {
    (0..count)
        .map(|seed| synthetic_problem(seed, SyntheticOptions::default()))
        .collect()
}

/// Best public reward over every program of the problem's grammar, found by
/// brute force.
pub fn exhaustive_max_reward(problem: &ProblemSpec) -> f64 {
    let grammar = problem.synthetic_grammar.as_ref().expect("synthetic problem");
    grammar
        .enumerate()
        .iter()
        .map(|lines| {
            let src: String = lines.iter().map(|l| format!("{l}\n")).collect();
            interpret_synthetic(&src, &problem.public_tests).value()
        })
        .fold(0.0, f64::max)
}

pub fn config(rollouts: usize, seed: u64) -> SearchConfig {
    SearchConfig::builder()
        .uct_c(4.0)
        .max_children(3)
        .max_rollouts(rollouts)
        .rng_seed(seed)
        .build()
        .unwrap()
}

/// Violations of the accounting invariants, empty when none.
pub fn conservation_violations(outcome: &SearchOutcome, m: usize) -> Vec<String> {
    let tree = &outcome.tree;
    let mut out = Vec::new();
    let mut visits = 0u64;
    let mut values = 0.0f64;
    for record in &outcome.per_rollout_log {
        if record.rewards.is_empty() {
            continue;
        }
        visits += record.rewards.len() as u64;
        values += record.rewards.iter().map(|r| r.value()).sum::<f64>();
    }
    let root = tree.root();
    if root.visits != visits {
        out.push(format!(
            "root.visits = {} but {visits} rewards were backpropagated",
            root.visits
        ));
    }
    if root.values != values {
        out.push(format!("root.values = {} but the rewards sum to {values}", root.values));
    }
    for node in tree.nodes() {
        if node.values > node.visits as f64 {
            out.push(format!(
                "{}: values {} > visits {}",
                node.node_id, node.values, node.visits
            ));
        }
        let non_refined = non_refined_children(tree, node.node_id);
        if non_refined.len() > m {
            out.push(format!("{}: {} non-refined children", node.node_id, non_refined.len()));
        }
    }
    out
}

pub fn non_refined_children(tree: &SearchTree, id: NodeId) -> Vec<NodeId> {
    tree.node(id)
        .unwrap()
        .children
        .iter()
        .copied()
        .filter(|&c| !tree.node(c).unwrap().is_refined)
        .collect()
}
