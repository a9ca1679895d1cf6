use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{apply_stop_sequences, GenerationError, GenerationRequest, Generator, RequestKind};
use crate::synthetic::{GrammarError, GrammarSpec};

fn stable_seed(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

fn context_seed(context: &[String], seed: u64, salt: &str) -> u64 {
    let joined = context.join("\n");
    stable_seed(&[salt.as_bytes(), joined.as_bytes(), &seed.to_le_bytes()])
}

/// Random completion of the program after `depth` body lines.
fn random_supplement(grammar: &GrammarSpec, depth: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    grammar.alternatives[depth..]
        .iter()
        .map(|alts| alts[rng.random_range(0..alts.len())].clone())
        .collect()
}

fn completion(first: &str, supplement: &[String]) -> String {
    std::iter::once(first.to_string())
        .chain(supplement.iter().cloned())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Samples distinct next lines after `context_lines` without replacement,
/// each followed by a random completion of the rest of the program.
///
/// At the end of the grammar a single empty completion is returned.
pub fn mock_grammar_generate(
    grammar: &GrammarSpec,
    context_lines: &[String],
    seed: u64,
    num_samples: usize,
) -> Result<Vec<String>, GrammarError> {
    let depth = grammar.derive(context_lines)?;
    let Some(alts) = grammar.alternatives.get(depth) else {
        return Ok(vec![String::new()]);
    };
    let base = context_seed(context_lines, seed, "expand");
    let mut order: Vec<&String> = alts.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(base));
    Ok(order
        .into_iter()
        .take(num_samples)
        .enumerate()
        .map(|(i, first)| {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[&base.to_le_bytes(), &(i as u64).to_le_bytes()]));
            completion(first, &random_supplement(grammar, depth + 1, &mut rng))
        })
        .collect())
}

/// One replacement completion after `context_lines`, preferring a line other
/// than `faulty_line`.
pub fn mock_grammar_refine(
    grammar: &GrammarSpec,
    context_lines: &[String],
    faulty_line: &str,
    seed: u64,
) -> Result<String, GrammarError> {
    let depth = grammar.derive(context_lines)?;
    let Some(alts) = grammar.alternatives.get(depth) else {
        return Ok(String::new());
    };
    let mut candidates: Vec<&String> = alts.iter().filter(|a| a.as_str() != faulty_line).collect();
    if candidates.is_empty() {
        candidates = alts.iter().collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
        &context_seed(context_lines, seed, "refine").to_le_bytes(),
        faulty_line.as_bytes(),
    ]));
    let first = candidates[rng.random_range(0..candidates.len())];
    Ok(completion(first, &random_supplement(grammar, depth + 1, &mut rng)))
}

/// Offline generator over a finite line grammar.
#[derive(Debug, Clone)]
pub struct MockGrammarGenerator {
    grammar: GrammarSpec,
}

impl MockGrammarGenerator {
    pub fn new(grammar: GrammarSpec) -> Self {
        Self { grammar }
    }

    pub fn grammar(&self) -> &GrammarSpec {
        &self.grammar
    }
}

impl Generator for MockGrammarGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, GenerationError> {
        request.validate()?;
        let raw = match &request.kind {
            RequestKind::Expand => {
                mock_grammar_generate(&self.grammar, &request.context, request.seed, request.num_samples)?
            }
            RequestKind::Refine { faulty_line } => {
                vec![mock_grammar_refine(
                    &self.grammar,
                    &request.context,
                    faulty_line,
                    request.seed,
                )?]
            }
        };
        Ok(raw
            .iter()
            .map(|c| apply_stop_sequences(c, &request.stop_sequences))
            .collect())
    }
}

/// Replays fixed completions keyed by the request context. Useful for
/// hand-stepped traces in tests.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    expansions: HashMap<Vec<String>, Vec<String>>,
    refinements: HashMap<(Vec<String>, String), String>,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_expand(mut self, context: &[&str], completions: &[&str]) -> Self {
        self.expansions.insert(
            context.iter().map(|s| s.to_string()).collect(),
            completions.iter().map(|s| s.to_string()).collect(),
        );
        self
    }

    pub fn on_refine(mut self, context: &[&str], faulty_line: &str, completion: &str) -> Self {
        self.refinements.insert(
            (context.iter().map(|s| s.to_string()).collect(), faulty_line.to_string()),
            completion.to_string(),
        );
        self
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, GenerationError> {
        request.validate()?;
        let out = match &request.kind {
            RequestKind::Expand => match self.expansions.get(&request.context) {
                Some(list) => list.iter().take(request.num_samples).cloned().collect(),
                None => vec![String::new()],
            },
            RequestKind::Refine { faulty_line } => vec![self
                .refinements
                .get(&(request.context.clone(), faulty_line.clone()))
                .cloned()
                .ok_or(GenerationError::Unscripted)?],
        };
        Ok(out
            .iter()
            .map(|c| apply_stop_sequences(c, &request.stop_sequences))
            .collect())
    }
}
