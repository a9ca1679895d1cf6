use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::uct::uct_score;
use super::SearchError;
use crate::model::{CodeBlock, NodeId, Reward, SearchConfig, SearchNode};

/// Arena of [`SearchNode`]s indexed by [`NodeId`]; the root is always node 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
    starter_context: Vec<String>,
    /// `N` of the UCT score.
    total_rollouts_executed: u64,
    #[serde(skip)]
    context_cache: HashMap<NodeId, Vec<String>>,
    #[serde(skip)]
    cache_hits: u64,
}

impl PartialEq for SearchTree {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.starter_context == other.starter_context
            && self.total_rollouts_executed == other.total_rollouts_executed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStats {
    pub node_count: usize,
    pub max_depth: u32,
    pub refined_node_count: usize,
}

impl SearchTree {
    pub fn new(starter_context: Vec<String>) -> Self {
        Self {
            nodes: vec![SearchNode::root()],
            starter_context,
            total_rollouts_executed: 0,
            context_cache: HashMap::new(),
            cache_hits: 0,
        }
    }

    pub fn root_id(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn starter_context(&self) -> &[String] {
        &self.starter_context
    }

    pub fn node(&self, id: NodeId) -> Result<&SearchNode, SearchError> {
        self.nodes.get(id.index()).ok_or(SearchError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut SearchNode, SearchError> {
        self.nodes.get_mut(id.index()).ok_or(SearchError::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.iter()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_rollouts_executed(&self) -> u64 {
        self.total_rollouts_executed
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits
    }

    pub fn stats(&self) -> TreeStats {
        TreeStats {
            node_count: self.nodes.len(),
            max_depth: self.nodes.iter().map(|n| n.depth).max().unwrap_or(0),
            refined_node_count: self.nodes.iter().filter(|n| n.is_refined).count(),
        }
    }

    pub fn non_refined_children(&self, id: NodeId) -> Result<usize, SearchError> {
        let node = self.node(id)?;
        Ok(node
            .children
            .iter()
            .filter(|c| !self.nodes[c.index()].is_refined)
            .count())
    }

    /// Appends a child under `parent` and returns its id.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        block: CodeBlock,
        refined_from: Option<NodeId>,
    ) -> Result<NodeId, SearchError> {
        let depth = self.node(parent)?.depth + 1;
        if let Some(source) = refined_from {
            self.node(source)?;
        }
        let id = NodeId(u32::try_from(self.nodes.len()).map_err(|_| SearchError::Contract("tree too large".into()))?);
        self.nodes.push(SearchNode {
            node_id: id,
            parent_id: Some(parent),
            block: Some(block),
            values: 0.0,
            visits: 0,
            children: Vec::new(),
            is_refined: refined_from.is_some(),
            is_terminal: false,
            depth,
            refined_from,
            reward: None,
        });
        self.node_mut(parent)?.children.push(id);
        Ok(id)
    }

    /// Stores a node's own evaluation and counts it as the node's first visit.
    pub fn record_evaluation(&mut self, id: NodeId, reward: Reward) -> Result<(), SearchError> {
        let node = self.node_mut(id)?;
        node.reward = Some(reward);
        node.values += reward.value();
        node.visits += 1;
        Ok(())
    }

    pub fn mark_terminal(&mut self, id: NodeId) -> Result<(), SearchError> {
        self.node_mut(id)?.is_terminal = true;
        Ok(())
    }

    /// Overwrites a node's counters; intended for building fixtures.
    pub fn set_stats(&mut self, id: NodeId, values: f64, visits: u64) -> Result<(), SearchError> {
        if values.is_nan() || values < 0.0 {
            return Err(SearchError::Contract("values must be >= 0".into()));
        }
        let node = self.node_mut(id)?;
        node.values = values;
        node.visits = visits;
        Ok(())
    }

    /// Overwrites `N`; intended for building fixtures.
    pub fn set_total_rollouts(&mut self, rollouts: u64) {
        self.total_rollouts_executed = rollouts;
    }

    /// Starter context followed by the line of every node on the path from
    /// the root down to `id` inclusive. Results are memoized.
    pub fn materialize_context(&mut self, id: NodeId) -> Result<Vec<String>, SearchError> {
        if let Some(hit) = self.context_cache.get(&id) {
            self.cache_hits += 1;
            return Ok(hit.clone());
        }
        let node = self.node(id)?;
        let context = match (node.parent_id, &node.block) {
            (Some(parent), Some(block)) => {
                let mut ctx = match self.context_cache.get(&parent) {
                    Some(parent_ctx) => parent_ctx.clone(),
                    None => self.materialize_uncached(parent)?,
                };
                ctx.push(block.line.clone());
                ctx
            }
            _ => self.starter_context.clone(),
        };
        self.context_cache.insert(id, context.clone());
        Ok(context)
    }

    /// Same as [`Self::materialize_context`] but walks the ancestors every time.
    pub fn materialize_uncached(&self, id: NodeId) -> Result<Vec<String>, SearchError> {
        let mut lines = Vec::new();
        let mut cursor = Some(id);
        while let Some(current) = cursor {
            let node = self.node(current)?;
            if let Some(line) = node.line() {
                lines.push(line.to_string());
            }
            cursor = node.parent_id;
        }
        lines.reverse();
        let mut ctx = self.starter_context.clone();
        ctx.extend(lines);
        Ok(ctx)
    }

    fn best_child(&self, id: NodeId, c: f64) -> Option<NodeId> {
        let rollouts = self.total_rollouts_executed.max(1);
        let mut best: Option<(NodeId, f64)> = None;
        for &child in &self.nodes[id.index()].children {
            let node = &self.nodes[child.index()];
            let score = uct_score(node.values, node.visits, rollouts, c).unwrap_or(f64::NEG_INFINITY);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((child, score));
            }
        }
        best.map(|(id, _)| id)
    }

    fn descend(&self, c: f64) -> NodeId {
        let mut current = NodeId::ROOT;
        while let Some(next) = self.best_child(current, c) {
            current = next;
        }
        current
    }

    /// Follows the maximal-UCT child from the root until a childless node.
    /// Ties go to the earliest created child.
    pub fn select_leaf(&self, config: &SearchConfig) -> NodeId {
        self.descend(config.uct_c)
    }

    /// The final answer node: the same UCT descent as selection, with
    /// `final_descent_c` in place of `uct_c` when set.
    pub fn best_path(&self, config: &SearchConfig) -> NodeId {
        self.descend(config.final_descent_c.unwrap_or(config.uct_c))
    }

    /// Earliest created node with the highest evaluated reward.
    pub fn best_evaluated(&self) -> Option<NodeId> {
        let mut best: Option<(NodeId, f64)> = None;
        for node in &self.nodes {
            if let Some(r) = node.reward {
                if best.is_none_or(|(_, v)| r.value() > v) {
                    best = Some((node.node_id, r.value()));
                }
            }
        }
        best.map(|(id, _)| id)
    }

    /// Adds every reward to each node from `from` up to the root and counts
    /// one executed rollout.
    pub fn backpropagate(&mut self, from: NodeId, rewards: &[Reward]) -> Result<(), SearchError> {
        if rewards.is_empty() {
            return Err(SearchError::Contract("backpropagate needs at least one reward".into()));
        }
        self.node(from)?;
        let sum: f64 = rewards.iter().map(Reward::value).sum();
        let count = rewards.len() as u64;
        let mut cursor = Some(from);
        while let Some(id) = cursor {
            let node = &mut self.nodes[id.index()];
            node.values += sum;
            node.visits += count;
            cursor = node.parent_id;
        }
        self.total_rollouts_executed += 1;
        Ok(())
    }

    pub fn path_to_root(&self, id: NodeId) -> Result<Vec<NodeId>, SearchError> {
        let mut path = Vec::new();
        let mut cursor = Some(id);
        while let Some(current) = cursor {
            path.push(current);
            cursor = self.node(current)?.parent_id;
        }
        path.reverse();
        Ok(path)
    }
}
