//! Acceptance suite. Runs every headline criterion with the mock generator
//! and the in-process evaluator, printing one PASS/FAIL line each.

mod common;

use std::collections::BTreeSet;
use std::panic;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsr_mcts::evaluator::Evaluator;
use lsr_mcts::generator::{MockGrammarGenerator, ScriptedGenerator};
use lsr_mcts::harness::{load_dataset, run_experiment, write_dataset, RunManifest};
use lsr_mcts::metrics::pass_at_k;
use lsr_mcts::model::{NodeId, ProblemSpec, SearchConfig, TestCase};
use lsr_mcts::tree_search::{run_search, uct_score, SearchOutcome};

use common::{config, conservation_violations, exhaustive_max_reward, non_refined_children, oracle_problems};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn uct_grid() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut sentinels = 0;
    for i in 0..1000 {
        let rollouts: u64 = rng.random_range(1..=500);
        let visits: u64 = if i % 10 == 0 { 0 } else { rng.random_range(1..=rollouts) };
        let values = rng.random_range(0.0..=visits as f64);
        let c = rng.random_range(0.0..=8.0);
        let got = uct_score(values, visits, rollouts, c).map_err(|e| e.to_string())?;
        if visits == 0 {
            ensure(got == f64::INFINITY, || format!("visits=0 gave {got}"))?;
            sentinels += 1;
            continue;
        }
        // exp(ln(x) / 2) in place of sqrt, mean computed separately.
        let mean = values / visits as f64;
        let bonus = c * (((rollouts as f64).ln() / visits as f64).ln() / 2.0).exp();
        let bonus = if rollouts == 1 { 0.0 } else { bonus };
        let expected = mean + bonus;
        let rel = if expected == 0.0 {
            got.abs()
        } else {
            ((got - expected) / expected).abs()
        };
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-9, || format!("worst relative error {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "1000 points, {sentinels} unvisited, worst rel err {worst:.2e}, {:?}",
        start.elapsed()
    ))
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

fn pass_at_k_estimator() -> Check {
    let start = Instant::now();
    let draws = 100_000u32;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_mc = 0.0f64;
    let mut worst_exact = 0.0f64;
    let mut cases = 0;
    for n in 1..=20usize {
        for c in 0..=n {
            // hits[p] counts draws whose first correct sample sits at position p;
            // a k-subset passes exactly when p < k.
            let mut hits = vec![0u32; n + 1];
            for _ in 0..draws {
                let mut pos = 0;
                while pos < n && rng.random_range(0..n - pos) >= c {
                    pos += 1;
                }
                hits[pos] += 1;
            }
            let mut cumulative = 0u32;
            for k in 1..=n {
                cumulative += hits[k - 1];
                let mc = f64::from(cumulative) / f64::from(draws);
                let got = pass_at_k(n, c, k).map_err(|e| e.to_string())?;
                let exact = 1.0 - binomial((n - c) as u64, k as u64) as f64 / binomial(n as u64, k as u64) as f64;
                worst_mc = worst_mc.max((got - mc).abs());
                worst_exact = worst_exact.max((got - exact).abs());
                cases += 1;
            }
        }
    }
    ensure(worst_mc <= 0.01, || format!("Monte Carlo gap {worst_mc}"))?;
    ensure(worst_exact <= 1e-12, || format!("closed-form gap {worst_exact:e}"))?;
    let a = pass_at_k(5, 2, 1).map_err(|e| e.to_string())?;
    ensure(a == 0.4, || format!("(5,2,1) = {a}"))?;
    let b = pass_at_k(10, 3, 5).map_err(|e| e.to_string())?;
    ensure((b - 11.0 / 12.0).abs() < 1e-12, || format!("(10,3,5) = {b}"))?;
    ensure(format!("{b:.6}") == "0.916667", || format!("(10,3,5) = {b}"))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{cases} (n,c,k) cases, worst MC gap {worst_mc:.4}, {:?}",
        start.elapsed()
    ))
}

fn search(problem: &ProblemSpec, cfg: &SearchConfig) -> Result<SearchOutcome, String> {
    let generator = MockGrammarGenerator::new(problem.synthetic_grammar.clone().unwrap());
    run_search(problem, cfg, &generator, &Evaluator::synthetic()).map_err(|e| e.to_string())
}

struct OracleRun {
    problem: ProblemSpec,
    outcome: SearchOutcome,
}

fn oracle_runs(rollouts: impl Fn(&ProblemSpec) -> usize) -> Result<(Vec<OracleRun>, usize), String> {
    let mut runs = Vec::new();
    let mut hits = 0;
    for (i, problem) in oracle_problems(20).into_iter().enumerate() {
        let cfg = config(rollouts(&problem), i as u64);
        let outcome = search(&problem, &cfg)?;
        if outcome.best_reward.value() == exhaustive_max_reward(&problem) {
            hits += 1;
        }
        runs.push(OracleRun { problem, outcome });
    }
    Ok((runs, hits))
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    for problem in oracle_problems(20) {
        let g = problem.synthetic_grammar.as_ref().unwrap();
        ensure(g.depth() <= 4 && g.language_size() <= 81, || {
            format!("{} outside the size bounds", problem.task_id)
        })?;
        ensure(g.alternatives.iter().all(|a| a.len() <= 3), || {
            format!("{} has a level with more than 3 alternatives", problem.task_id)
        })?;
    }
    let (_, at_100) = oracle_runs(|_| 100)?;
    let (_, at_size) = oracle_runs(|p| p.synthetic_grammar.as_ref().unwrap().language_size())?;
    ensure(at_100 >= 19, || {
        format!("rollouts=100 reached the maximum on {at_100}/20")
    })?;
    ensure(at_size == 20, || {
        format!("rollouts=|L| reached the maximum on {at_size}/20")
    })?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "rollouts=100: {at_100}/20, rollouts=|L|: {at_size}/20, {:?}",
        start.elapsed()
    ))
}

fn oracle_runs_both_stop_modes() -> Result<Vec<OracleRun>, String> {
    let mut runs = oracle_runs(|_| 100)?.0;
    for (i, problem) in oracle_problems(20).into_iter().enumerate() {
        let mut cfg = config(100, i as u64);
        cfg.early_stop = false;
        let outcome = search(&problem, &cfg)?;
        runs.push(OracleRun { problem, outcome });
    }
    Ok(runs)
}

fn conservation() -> Check {
    let runs = oracle_runs_both_stop_modes()?;
    let mut nodes = 0;
    for run in &runs {
        let violations = conservation_violations(&run.outcome, 3);
        ensure(violations.is_empty(), || {
            format!("{}: {}", run.problem.task_id, violations.join("; "))
        })?;
        nodes += run.outcome.tree.len();
    }
    Ok(format!("{} runs, {nodes} nodes checked", runs.len()))
}

fn single_chain() -> Result<(), String> {
    for (i, problem) in oracle_problems(20).into_iter().enumerate() {
        let mut cfg = config(100, i as u64);
        cfg.max_children = 1;
        cfg.early_stop = false;
        let outcome = search(&problem, &cfg)?;
        let tree = &outcome.tree;
        for node in tree.nodes() {
            let kids = non_refined_children(tree, node.node_id);
            ensure(kids.len() <= 1, || {
                format!(
                    "{}: {} has {} non-refined children",
                    problem.task_id,
                    node.node_id,
                    kids.len()
                )
            })?;
        }
        // Non-refined edges from the root trace one path, one node per depth.
        let mut cursor = tree.root_id();
        let mut depth = 0;
        while let Some(&next) = non_refined_children(tree, cursor).first() {
            depth += 1;
            ensure(tree.node(next).unwrap().depth == depth, || {
                "chain depth mismatch".into()
            })?;
            cursor = next;
        }
        ensure(depth >= 1, || format!("{}: empty chain", problem.task_id))?;
    }
    Ok(())
}

fn lines(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Root expansion returns four completions, of which the first three become
/// children scoring 1/3, 2/3 and 0. The first (below 0.5) and the third (below
/// 0.5 and last) are refined into siblings scoring 2/3 and 1/3. With one
/// rollout the final descent is pure exploitation, so the answer is the
/// second child: it ties with the first refinement and was created earlier.
fn single_rollout() -> Result<(), String> {
    let problem = ProblemSpec {
        task_id: "trace".into(),
        nl_description: "double a".into(),
        starter_context: lines(&["def f(a):"]),
        public_tests: ["assert f(0) == 0", "assert f(1) == 2", "assert f(2) == 4"]
            .into_iter()
            .map(TestCase::new)
            .collect(),
        private_tests: vec![TestCase::new("assert f(3) == 6")],
        entry_point: "f".into(),
        synthetic_grammar: None,
    };
    let root = ["def f(a):"];
    let generator = ScriptedGenerator::new()
        .on_expand(
            &root,
            &["    return a", "    return a * a", "    return 7", "    return a + a"],
        )
        .on_refine(&root, "    return a", "    return a * a + 0")
        .on_refine(&root, "    return 7", "    return a + 1");
    let evaluator = Evaluator::synthetic();
    for early_stop in [true, false] {
        let mut cfg = config(1, 0);
        cfg.early_stop = early_stop;
        let outcome = run_search(&problem, &cfg, &generator, &evaluator).map_err(|e| e.to_string())?;
        let tag = format!("early_stop={early_stop}");
        ensure(outcome.best_program == "def f(a):\n    return a * a\n", || {
            format!("{tag}: answer {:?}", outcome.best_program)
        })?;
        ensure(outcome.best_node == NodeId(2), || {
            format!("{tag}: answer node {}", outcome.best_node)
        })?;
        ensure(outcome.per_rollout_log.len() == 1, || {
            format!("{tag}: more than one rollout")
        })?;
        let record = &outcome.per_rollout_log[0];
        let rewards: Vec<u32> = record.rewards.iter().map(|r| r.passed()).collect();
        ensure(rewards == [1, 2, 0, 2, 1], || {
            format!("{tag}: passed counts {rewards:?}")
        })?;
        ensure(record.created == [NodeId(1), NodeId(2), NodeId(3)], || {
            format!("{tag}: created {:?}", record.created)
        })?;
        ensure(record.refined == [NodeId(4), NodeId(5)], || {
            format!("{tag}: refined {:?}", record.refined)
        })?;
        let sources: Vec<_> = outcome.tree.nodes().map(|n| n.refined_from).collect();
        ensure(
            sources == [None, None, None, None, Some(NodeId(1)), Some(NodeId(3))],
            || format!("{tag}: refined_from {sources:?}"),
        )?;
    }
    Ok(())
}

fn degenerate_modes() -> Check {
    single_chain()?;
    single_rollout()?;
    Ok("m=1 chain on 20 problems, n=1 matches the hand-stepped trace".into())
}

fn refine_gating() -> Check {
    let runs = oracle_runs_both_stop_modes()?;
    let mut refined_total = 0;
    for run in &runs {
        let tree = &run.outcome.tree;
        let actual: BTreeSet<_> = tree.nodes().filter_map(|n| n.refined_from).collect();
        let mut expected: BTreeSet<_> = tree
            .nodes()
            .filter(|n| n.parent_id.is_some() && !n.is_refined)
            .filter(|n| n.reward.is_some_and(|r| r.value() < 0.5))
            .map(|n| n.node_id)
            .collect();
        expected.extend(run.outcome.per_rollout_log.iter().filter_map(|r| r.last_in_path));
        ensure(actual == expected, || {
            format!(
                "{}: refined and expected sets differ on {:?}",
                run.problem.task_id,
                actual.symmetric_difference(&expected).collect::<Vec<_>>()
            )
        })?;
        refined_total += actual.len();
    }
    Ok(format!("{} runs, {refined_total} refinements", runs.len()))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = dir.path().join("synthetic.jsonl");
    write_dataset(&dataset, &oracle_problems(5)).map_err(|e| e.to_string())?;
    let count = load_dataset(&dataset, false).map_err(|e| e.to_string())?.len();
    let mut reports = Vec::new();
    for _ in 0..2 {
        let mut manifest = RunManifest::new(&dataset, 5, vec![1, 3, 5]);
        manifest.config.max_rollouts = 20;
        manifest.config.rng_seed = 42;
        manifest.output_path = Some(dir.path().join("report.json"));
        run_experiment(&manifest).map_err(|e| e.to_string())?;
        reports.push(std::fs::read(dir.path().join("report.json")).map_err(|e| e.to_string())?);
    }
    ensure(reports[0] == reports[1], || "report bytes differ".into())?;
    Ok(format!(
        "{count} problems x 5 samples, {} identical bytes",
        reports[0].len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("uct_correctness", uct_grid),
        ("pass_at_k_estimator", pass_at_k_estimator),
        ("oracle_equivalence", oracle_equivalence),
        ("conservation", conservation),
        ("degenerate_modes", degenerate_modes),
        ("refine_gating", refine_gating),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
