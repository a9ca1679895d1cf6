//! The subprocess sandbox protocol, exercised with stand-in shims.

use std::time::{Duration, Instant};

use lsr_mcts::evaluator::{
    assemble_program, EvalError, Evaluator, Sandbox, ShimImage, ShimRequest, ShimResponse, ShimSandbox,
};
use lsr_mcts::model::{CodeBlock, FailureKind, TestCase};
use lsr_mcts::synthetic::interpret_synthetic;

fn sh(script: &str) -> ShimSandbox {
    ShimSandbox::new(ShimImage {
        command: vec!["sh".into(), "-c".into(), script.into()],
    })
    .unwrap()
}

fn tests(n: usize) -> Vec<TestCase> {
    (0..n)
        .map(|i| TestCase::new(format!("assert f({i}) == {}", 2 * i)))
        .collect()
}

const SECOND: Duration = Duration::from_secs(1);

#[test]
fn canned_responses_become_rewards() {
    let shim = sh(
        r#"cat >/dev/null; echo '{"passed": 2, "total": 3, "failure_kind": "test_failure", "stderr_excerpt": "AssertionError"}'"#,
    );
    let report = shim.run("def f(a):\n", &tests(3), SECOND).unwrap();
    assert_eq!((report.reward.passed(), report.reward.total()), (2, 3));
    assert_eq!(report.reward.failure_kind(), FailureKind::TestFailure);
    assert_eq!(report.stderr_excerpt, "AssertionError");
}

#[test]
fn the_request_is_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("req.json");
    let script = format!(
        r#"cat > '{}'; echo '{{"passed": 1, "total": 1, "failure_kind": "none"}}'"#,
        dump.display()
    );
    let shim = sh(&script).with_memory_limit_mb(256);
    shim.run("def f(a):\n    return a\n", &tests(1), Duration::from_millis(1500))
        .unwrap();
    let raw = std::fs::read_to_string(&dump).unwrap();
    assert!(raw.ends_with('\n') && raw.matches('\n').count() == 1);
    let req: ShimRequest = serde_json::from_str(&raw).unwrap();
    assert_eq!(req.program, "def f(a):\n    return a\n");
    assert_eq!(req.assertions, ["assert f(0) == 0"]);
    assert_eq!(req.timeout_seconds, 1.5);
    assert_eq!(req.memory_limit_mb, 256);
}

#[test]
fn hung_shims_are_killed_by_the_watchdog() {
    let shim = sh("sleep 30").with_grace(Duration::from_millis(100));
    let started = Instant::now();
    let report = shim.run("def f(a):\n", &tests(2), Duration::from_millis(300)).unwrap();
    let elapsed = started.elapsed();
    assert_eq!(report.reward.failure_kind(), FailureKind::Timeout);
    assert_eq!(report.reward.value(), 0.0);
    assert!(
        elapsed >= Duration::from_millis(400) && elapsed < Duration::from_secs(3),
        "{elapsed:?}"
    );
}

#[test]
fn cpu_limit_ends_busy_loops() {
    // Long grace, so only the CPU rlimit (timeout + 1 s) can stop it.
    let shim = sh("cat >/dev/null; while :; do :; done").with_grace(Duration::from_secs(20));
    let started = Instant::now();
    let report = shim.run("def f(a):\n", &tests(1), Duration::from_millis(500)).unwrap();
    assert_eq!(report.reward.failure_kind(), FailureKind::Timeout);
    assert!(started.elapsed() < Duration::from_secs(10), "{:?}", started.elapsed());
}

#[test]
fn silent_crashes_are_protocol_errors() {
    let shim = sh("cat >/dev/null; echo 'Traceback: boom' >&2; exit 3");
    match shim.run("x", &tests(1), SECOND) {
        Err(EvalError::Protocol(msg)) => assert!(msg.contains("boom"), "{msg}"),
        other => panic!("expected a protocol error, got {other:?}"),
    }
}

#[test]
fn invalid_responses_are_protocol_errors() {
    for body in [
        "not json",
        r#"{"passed": 4, "total": 3, "failure_kind": "test_failure"}"#,
        r#"{"passed": 1, "total": 2, "failure_kind": "test_failure"}"#,
        r#"{"passed": 3, "total": 3, "failure_kind": "test_failure"}"#,
    ] {
        let shim = sh(&format!("cat >/dev/null; echo '{body}'"));
        let err = shim.run("x", &tests(3), SECOND).unwrap_err();
        assert!(
            matches!(err, EvalError::Protocol(_) | EvalError::Reward(_)),
            "{body}: {err}"
        );
    }
}

#[test]
fn parse_errors_and_timeouts_score_zero() {
    for kind in ["parse_error", "timeout"] {
        let shim = sh(&format!(
            r#"cat >/dev/null; echo '{{"passed": 2, "total": 3, "failure_kind": "{kind}"}}'"#
        ));
        let report = shim.run("x", &tests(3), SECOND).unwrap();
        assert_eq!(report.reward.passed(), 0, "{kind}");
        assert_eq!(report.reward.total(), 3);
    }
}

#[test]
fn missing_commands_are_unavailable_sandboxes() {
    let shim = ShimSandbox::new(ShimImage {
        command: vec!["/nonexistent/shim".into()],
    })
    .unwrap();
    assert!(matches!(
        shim.run("x", &tests(1), SECOND),
        Err(EvalError::SandboxUnavailable(_))
    ));
    assert!(ShimSandbox::new(ShimImage { command: vec![] }).is_err());
    assert!(matches!(shim.run("x", &[], SECOND), Err(EvalError::NoTests)));
}

#[test]
fn the_environment_is_scrubbed() {
    std::env::set_var("LSR_MCTS_API_KEY", "sk-secret");
    let shim = sh(
        r#"cat >/dev/null; if [ -z "$LSR_MCTS_API_KEY" ] && [ -n "$PATH" ]; then k=none; p=1; else k=test_failure; p=0; fi; echo "{\"passed\": $p, \"total\": 1, \"failure_kind\": \"$k\"}""#,
    );
    let report = shim.run("x", &tests(1), SECOND).unwrap();
    assert!(report.reward.is_perfect());
}

#[test]
fn responses_round_trip() {
    let r = ShimResponse {
        passed: 1,
        total: 2,
        failure_kind: FailureKind::RuntimeError,
        stderr_excerpt: "ZeroDivisionError".into(),
    };
    let back: ShimResponse = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(back, r);
    let minimal: ShimResponse = serde_json::from_str(r#"{"passed":0,"total":1,"failure_kind":"timeout"}"#).unwrap();
    assert!(minimal.stderr_excerpt.is_empty());
}

/// Ten programs scored through the subprocess protocol match the in-process
/// pass fraction exactly.
#[test]
fn subprocess_rewards_match_in_process_rewards() {
    let image = ShimImage {
        command: vec![env!("CARGO_BIN_EXE_lsr-mcts").into(), "synthetic-shim".into()],
    };
    let evaluator = Evaluator::new(ShimSandbox::new(image).unwrap()).without_cache();
    let public: Vec<TestCase> = ["assert f(0) == 0", "assert f(1) == 2", "assert f(3) == 6"]
        .into_iter()
        .map(TestCase::new)
        .collect();
    let bodies: [&[&str]; 10] = [
        &["    return a * 2"],
        &["    return a + a"],
        &["    return a"],
        &["    return 0"],
        &["    return a * a"],
        &["    x = a + 1", "    return x * 2 - 2"],
        &["    return b"],
        &["    return a +"],
        &["    return f(a - 1) + 2"],
        &["    x = 2", "    return a * x + 0"],
    ];
    for body in bodies {
        let block = CodeBlock {
            context: vec!["def f(a):".into()],
            line: body[0].into(),
            supplement: body[1..].iter().map(|s| s.to_string()).collect(),
        };
        let through_shim = evaluator
            .evaluate_public(&block, &public, Duration::from_secs(5))
            .unwrap();
        let in_process = interpret_synthetic(&assemble_program(&block), &public);
        assert_eq!(through_shim, in_process, "{body:?}");
    }
}
