//! Client side of the sandbox shim protocol.
//!
//! The shim is a separate single-shot process: it reads one [`ShimRequest`]
//! JSON object (newline-terminated) on stdin, writes one [`ShimResponse`] on
//! stdout and exits 0. The engine adds its own wall-clock watchdog and CPU
//! rlimit on top of whatever limits the shim enforces.

use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{truncate_excerpt, EvalError, ExecutionReport, Sandbox};
use crate::model::{FailureKind, Reward, TestCase};

pub const STDERR_EXCERPT_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimRequest {
    pub program: String,
    pub assertions: Vec<String>,
    pub timeout_seconds: f64,
    pub memory_limit_mb: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimResponse {
    pub passed: u32,
    pub total: u32,
    pub failure_kind: FailureKind,
    #[serde(default)]
    pub stderr_excerpt: String,
}

impl ShimResponse {
    /// Checks the response against the request it answers.
    pub fn into_reward(self, submitted: usize) -> Result<Reward, EvalError> {
        if self.total as usize != submitted {
            return Err(EvalError::Protocol(format!(
                "shim reported total {} for {submitted} assertions",
                self.total
            )));
        }
        if self.passed > self.total {
            return Err(EvalError::Protocol(format!(
                "shim reported {} passed of {}",
                self.passed, self.total
            )));
        }
        match self.failure_kind {
            FailureKind::ParseError | FailureKind::Timeout => Ok(Reward::zero(self.total, self.failure_kind)?),
            kind => Ok(Reward::new(self.passed, self.total, kind)?),
        }
    }
}

/// How to launch the shim, e.g. `["python3", "-I", "sandbox_shim.py"]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShimImage {
    pub command: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ShimSandbox {
    image: ShimImage,
    memory_limit_mb: u64,
    /// Extra wall time granted past the request timeout before the watchdog
    /// kills the process.
    grace: Duration,
}

impl ShimSandbox {
    pub fn new(image: ShimImage) -> Result<Self, EvalError> {
        if image.command.is_empty() {
            return Err(EvalError::SandboxUnavailable("empty shim command".into()));
        }
        Ok(Self {
            image,
            memory_limit_mb: 512,
            grace: Duration::from_millis(500),
        })
    }

    pub fn with_memory_limit_mb(mut self, mb: u64) -> Self {
        self.memory_limit_mb = mb;
        self
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    fn spawn(&self, cpu_seconds: u64) -> Result<Child, EvalError> {
        let mut cmd = Command::new(&self.image.command[0]);
        cmd.args(&self.image.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env_clear();
        for var in ["PATH", "LANG", "LC_ALL", "HOME", "TMPDIR"] {
            if let Ok(v) = std::env::var(var) {
                cmd.env(var, v);
            }
        }
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            // SAFETY: only async-signal-safe libc calls between fork and exec.
            unsafe {
                cmd.pre_exec(move || {
                    // Own process group, so the watchdog can kill descendants too.
                    if libc::setpgid(0, 0) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                    let limit = libc::rlimit {
                        rlim_cur: cpu_seconds as libc::rlim_t,
                        rlim_max: (cpu_seconds + 1) as libc::rlim_t,
                    };
                    if libc::setrlimit(libc::RLIMIT_CPU, &limit) != 0 {
                        return Err(std::io::Error::last_os_error());
                    }
                    Ok(())
                });
            }
        }
        cmd.spawn()
            .map_err(|e| EvalError::SandboxUnavailable(format!("spawning {:?}: {e}", self.image.command)))
    }
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        if let Ok(pid) = libc::pid_t::try_from(child.id()) {
            // SAFETY: plain syscall on the group created in `spawn`.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

fn drain<R: Read + Send + 'static>(reader: Option<R>, cap: usize) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(r) = reader {
            let _ = r.take(cap as u64).read_to_end(&mut buf);
        }
        buf
    })
}

impl Sandbox for ShimSandbox {
    fn run(&self, program: &str, tests: &[TestCase], timeout: Duration) -> Result<ExecutionReport, EvalError> {
        if tests.is_empty() {
            return Err(EvalError::NoTests);
        }
        let request = ShimRequest {
            program: program.to_string(),
            assertions: tests.iter().map(|t| t.assertion_source.clone()).collect(),
            timeout_seconds: timeout.as_secs_f64(),
            memory_limit_mb: self.memory_limit_mb,
        };
        let mut payload = serde_json::to_vec(&request).map_err(|e| EvalError::Protocol(e.to_string()))?;
        payload.push(b'\n');

        let cpu_seconds = timeout.as_secs_f64().ceil() as u64 + 1;
        let mut child = self.spawn(cpu_seconds)?;
        let stdout = drain(child.stdout.take(), 1 << 20);
        let stderr = drain(child.stderr.take(), STDERR_EXCERPT_LIMIT);
        if let Some(mut stdin) = child.stdin.take() {
            // A shim that exits before reading its input surfaces below as a
            // missing response.
            let _ = stdin.write_all(&payload);
        }

        let status = child.wait_timeout(timeout + self.grace)?;
        let timed_out = status.is_none();
        if timed_out {
            kill_tree(&mut child);
        }
        let out = stdout.join().unwrap_or_default();
        let err = String::from_utf8_lossy(&stderr.join().unwrap_or_default()).into_owned();
        let total = tests.len() as u32;
        if timed_out {
            return Ok(ExecutionReport {
                reward: Reward::zero(total, FailureKind::Timeout)?,
                stderr_excerpt: truncate_excerpt(&err),
            });
        }

        let text = String::from_utf8_lossy(&out);
        let body = text.trim();
        if body.is_empty() {
            #[cfg(unix)]
            {
                use std::os::unix::process::ExitStatusExt;
                if let Some(sig) = status.and_then(|s| s.signal()) {
                    if sig == libc::SIGXCPU || sig == libc::SIGKILL {
                        return Ok(ExecutionReport {
                            reward: Reward::zero(total, FailureKind::Timeout)?,
                            stderr_excerpt: truncate_excerpt(&err),
                        });
                    }
                }
            }
            return Err(EvalError::Protocol(format!(
                "shim exited with {status:?} without a response; stderr: {}",
                truncate_excerpt(&err)
            )));
        }
        let response: ShimResponse =
            serde_json::from_str(body).map_err(|e| EvalError::Protocol(format!("bad shim response: {e}")))?;
        let excerpt = if response.stderr_excerpt.is_empty() {
            err
        } else {
            response.stderr_excerpt.clone()
        };
        Ok(ExecutionReport {
            reward: response.into_reward(tests.len())?,
            stderr_excerpt: truncate_excerpt(&excerpt),
        })
    }
}
