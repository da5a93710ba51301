use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{classify_outcome, ExecutionLimits, Executor, ExecutorError, ExitKind, ProcessOutcome};
use crate::model::{ExecutionReport, GeneratedProgram};

/// Most output retained per stream while a program runs. Older output is
/// discarded first, so the last result line survives chatty programs.
const RETAIN_BYTES: usize = 8 * 1024 * 1024;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    /// Interpreter command line; the program path is appended.
    pub interpreter: Vec<String>,
    /// File name the program is written to inside its working directory.
    pub file_name: String,
    pub output_cap_bytes: usize,
    /// Concurrent executions allowed.
    pub pool_size: usize,
    /// Variables passed through from the parent environment when set.
    pub inherit_env: Vec<String>,
    /// Extra variables for the child.
    pub env: BTreeMap<String, String>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            interpreter: vec!["python3".into()],
            file_name: "program.py".into(),
            output_cap_bytes: ExecutionLimits::default().output_cap_bytes,
            pool_size: 4,
            inherit_env: [
                "PATH",
                "HOME",
                "LANG",
                "LC_ALL",
                "PYTHONPATH",
                "VIRTUAL_ENV",
            ]
            .map(String::from)
            .to_vec(),
            env: BTreeMap::new(),
        }
    }
}

struct Pool {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Pool);

impl Pool {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Runs each program in a fresh temporary directory as a child process in its
/// own process group, killing the whole group at the timeout.
pub struct SubprocessExecutor {
    config: ExecutorConfig,
    pool: Pool,
}

impl SubprocessExecutor {
    pub fn new(config: ExecutorConfig) -> Result<Self, ExecutorError> {
        if config.interpreter.is_empty() || config.interpreter[0].trim().is_empty() {
            return Err(ExecutorError::Environment(
                "interpreter command is empty".into(),
            ));
        }
        let size = config.pool_size.max(1);
        Ok(Self {
            config,
            pool: Pool {
                free: Mutex::new(size),
                cv: Condvar::new(),
            },
        })
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    /// Runs `source` and returns the raw process outcome.
    pub fn run(&self, source: &str, timeout_secs: f64) -> Result<ProcessOutcome, ExecutorError> {
        if source.trim().is_empty() {
            return Err(ExecutorError::EmptyProgram);
        }
        let _permit = self.pool.acquire();
        let io = |e: std::io::Error| ExecutorError::Io(e.to_string());
        let dir = tempfile::Builder::new()
            .prefix("trival-run-")
            .tempdir()
            .map_err(io)?;
        std::fs::write(dir.path().join(&self.config.file_name), source).map_err(io)?;

        let argv = &self.config.interpreter;
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .arg(&self.config.file_name)
            .current_dir(dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env_clear()
            .process_group(0);
        for key in &self.config.inherit_env {
            if let Ok(v) = std::env::var(key) {
                cmd.env(key, v);
            }
        }
        cmd.env("TMPDIR", dir.path())
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .envs(&self.config.env);

        let start = Instant::now();
        let mut child = cmd.spawn().map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                ExecutorError::Environment(format!("cannot start interpreter `{}`: {e}", argv[0]))
            }
            _ => ExecutorError::Io(e.to_string()),
        })?;
        let pid = child.id() as libc::pid_t;
        let out = spawn_reader(child.stdout.take());
        let err = spawn_reader(child.stderr.take());

        let timeout = Duration::from_secs_f64(timeout_secs.max(0.0));
        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait().map_err(io)? {
                break status;
            }
            if start.elapsed() >= timeout {
                timed_out = true;
                kill_group(pid);
                break child.wait().map_err(io)?;
            }
            thread::sleep(POLL);
        };
        // reap anything the program left behind holding the pipes open
        kill_group(pid);
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();
        let wall_time = start.elapsed().as_secs_f64();

        let exit = if timed_out {
            ExitKind::TimedOut
        } else if let Some(code) = status.code() {
            ExitKind::Code(code)
        } else {
            use std::os::unix::process::ExitStatusExt;
            ExitKind::Signal(status.signal().unwrap_or(0))
        };
        Ok(ProcessOutcome {
            exit,
            stdout,
            stderr,
            wall_time,
        })
    }
}

fn kill_group(pid: libc::pid_t) {
    // SAFETY: killpg only sends a signal; a stale group id yields ESRCH.
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
}

fn spawn_reader<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let Some(mut pipe) = pipe else {
            return String::new();
        };
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    kept.extend_from_slice(&buf[..n]);
                    if kept.len() > RETAIN_BYTES {
                        let cut = kept.len() - RETAIN_BYTES / 2;
                        kept.drain(..cut);
                    }
                }
            }
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

impl Executor for SubprocessExecutor {
    fn execute(
        &self,
        program: &GeneratedProgram,
        limits: &ExecutionLimits,
    ) -> Result<ExecutionReport, ExecutorError> {
        let outcome = self.run(&program.source, limits.timeout_secs)?;
        Ok(classify_outcome(&outcome, limits.output_cap_bytes))
    }
}
