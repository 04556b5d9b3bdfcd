//! Compile-and-test runner for generated C code.
//!
//! Each run gets a fresh directory holding the task source (generated code
//! followed by the task entrypoint) and the test script. Children run in
//! their own process group so a timeout kills everything they spawned.
//!
//! There is no OS-level isolation: generated code runs with the privileges
//! of the calling user.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("{action}: {source}")]
    Io {
        action: String,
        #[source]
        source: std::io::Error,
    },
    #[error("command not found: {0}")]
    ToolMissing(String),
    #[error("{0} command template is empty")]
    EmptyCommand(&'static str),
}

fn io_err(action: impl Into<String>) -> impl FnOnce(std::io::Error) -> SandboxError {
    let action = action.into();
    move |source| SandboxError::Io { action, source }
}

/// File names inside a workspace. These are the names bound into the
/// test-generation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkspaceLayout {
    pub task_file_name: String,
    pub executable_file_name: String,
    pub test_file_name: String,
}

impl Default for WorkspaceLayout {
    fn default() -> Self {
        Self {
            task_file_name: "task.c".into(),
            executable_file_name: "task".into(),
            test_file_name: "test_task.py".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    /// Compiler argv; `{src}` and `{out}` are replaced by file names
    /// relative to the workspace root.
    pub compile_cmd: Vec<String>,
    /// Test argv; `{test}` is replaced by the test file name.
    pub test_cmd: Vec<String>,
    pub compile_timeout_s: f64,
    pub test_timeout_s: f64,
    pub output_cap_bytes: usize,
    /// 0 means one per available CPU.
    pub max_concurrent: usize,
    pub layout: WorkspaceLayout,
    /// Keep workspaces under this directory instead of deleting them.
    pub keep_workspaces_in: Option<PathBuf>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            compile_cmd: ["gcc", "-std=gnu11", "-O0", "-o", "{out}", "{src}", "-lm"].map(String::from).to_vec(),
            test_cmd: ["python3", "{test}"].map(String::from).to_vec(),
            compile_timeout_s: 30.0,
            test_timeout_s: 60.0,
            output_cap_bytes: 16 * 1024,
            max_concurrent: 0,
            layout: WorkspaceLayout::default(),
            keep_workspaces_in: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Passed,
    Failed,
    CompileError,
    Timeout,
    Crash,
}

impl TestStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TestStatus::Passed => "passed",
            TestStatus::Failed => "failed",
            TestStatus::CompileError => "compile_error",
            TestStatus::Timeout => "timeout",
            TestStatus::Crash => "crash",
        }
    }
}

impl std::fmt::Display for TestStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileResult {
    pub ok: bool,
    pub timed_out: bool,
    pub diagnostics: String,
    pub duration: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRunOutcome {
    pub status: TestStatus,
    pub diagnostics: String,
    pub duration: Duration,
}

/// Counting semaphore bounding concurrent child processes.
#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// A materialized run directory. Deleted on drop unless the sandbox keeps
/// workspaces.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    layout: WorkspaceLayout,
    _dir: Option<tempfile::TempDir>,
}

impl Workspace {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn layout(&self) -> &WorkspaceLayout {
        &self.layout
    }

    pub fn task_path(&self) -> PathBuf {
        self.root.join(&self.layout.task_file_name)
    }

    pub fn executable_path(&self) -> PathBuf {
        self.root.join(&self.layout.executable_file_name)
    }

    pub fn test_path(&self) -> PathBuf {
        self.root.join(&self.layout.test_file_name)
    }
}

/// Task file content: generated code, a newline, then the entrypoint.
pub fn assemble_source(code: &str, entrypoint: &str) -> String {
    format!("{code}\n{entrypoint}")
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    config: SandboxConfig,
    permits: Arc<Semaphore>,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        let n = match config.max_concurrent {
            0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            n => n,
        };
        Self { config, permits: Arc::new(Semaphore::new(n)) }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn layout(&self) -> &WorkspaceLayout {
        &self.config.layout
    }

    pub fn materialize(&self, code: &str, entrypoint: &str, tests: &str) -> Result<Workspace, SandboxError> {
        let builder = {
            let mut b = tempfile::Builder::new();
            b.prefix("ws-");
            b
        };
        let (root, dir) = match &self.config.keep_workspaces_in {
            Some(parent) => {
                std::fs::create_dir_all(parent).map_err(io_err(format!("creating {}", parent.display())))?;
                let dir = builder.tempdir_in(parent).map_err(io_err("creating workspace"))?;
                (dir.keep(), None)
            }
            None => {
                let dir = builder.tempdir().map_err(io_err("creating workspace"))?;
                (dir.path().to_path_buf(), Some(dir))
            }
        };
        let ws = Workspace { root, layout: self.config.layout.clone(), _dir: dir };
        std::fs::write(ws.task_path(), assemble_source(code, entrypoint)).map_err(io_err("writing task source"))?;
        std::fs::write(ws.test_path(), tests).map_err(io_err("writing test script"))?;
        Ok(ws)
    }

    pub fn compile(&self, ws: &Workspace) -> Result<CompileResult, SandboxError> {
        let argv = substitute(&self.config.compile_cmd, &[
            ("{src}", &ws.layout.task_file_name),
            ("{out}", &ws.layout.executable_file_name),
        ]);
        let run = self.run(ws, &argv, "compile", self.config.compile_timeout_s)?;
        let ok = !run.timed_out && run.status.is_some_and(|s| s.success()) && ws.executable_path().exists();
        let mut diagnostics = run.output;
        if !ok && diagnostics.is_empty() {
            diagnostics = describe_exit(&run.status, run.timed_out, self.config.compile_timeout_s);
        }
        Ok(CompileResult { ok, timed_out: run.timed_out, diagnostics, duration: run.duration })
    }

    pub fn run_tests(&self, ws: &Workspace, compiled: &CompileResult) -> Result<TestRunOutcome, SandboxError> {
        if !compiled.ok {
            return Ok(TestRunOutcome {
                status: TestStatus::CompileError,
                diagnostics: compiled.diagnostics.clone(),
                duration: Duration::ZERO,
            });
        }
        let argv = substitute(&self.config.test_cmd, &[("{test}", &ws.layout.test_file_name)]);
        let run = self.run(ws, &argv, "test", self.config.test_timeout_s)?;
        let status = classify(run.status.as_ref(), run.timed_out);
        let mut diagnostics = run.output;
        if status != TestStatus::Passed && diagnostics.is_empty() {
            diagnostics = describe_exit(&run.status, run.timed_out, self.config.test_timeout_s);
        }
        Ok(TestRunOutcome { status, diagnostics, duration: run.duration })
    }

    /// Materializes, compiles and runs in one go.
    pub fn execute(&self, code: &str, entrypoint: &str, tests: &str) -> Result<TestRunOutcome, SandboxError> {
        let ws = self.materialize(code, entrypoint, tests)?;
        let compiled = self.compile(&ws)?;
        self.run_tests(&ws, &compiled)
    }

    fn run(&self, ws: &Workspace, argv: &[String], what: &'static str, timeout_s: f64) -> Result<RawRun, SandboxError> {
        let (program, args) = argv.split_first().ok_or(SandboxError::EmptyCommand(what))?;
        let _permit = self.permits.acquire();
        let (mut reader, writer) = std::io::pipe().map_err(io_err("creating pipe"))?;
        let err_writer = writer.try_clone().map_err(io_err("creating pipe"))?;
        let start = Instant::now();
        let child = {
            let mut cmd = Command::new(program);
            cmd.args(args)
                .current_dir(&ws.root)
                .stdin(Stdio::null())
                .stdout(writer)
                .stderr(err_writer)
                .env("PYTHONUNBUFFERED", "1")
                .env("PYTHONDONTWRITEBYTECODE", "1")
                .env("PYTHONHASHSEED", "0")
                .env("LC_ALL", "C")
                .process_group(0);
            cmd.spawn()
        };
        let mut child = match child {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(SandboxError::ToolMissing(program.clone())),
            Err(e) => return Err(io_err(format!("spawning {program}"))(e)),
        };
        let pgid = child.id() as i32;

        let captured = Arc::new(Mutex::new(Vec::new()));
        let (done_tx, done_rx) = mpsc::channel();
        {
            let captured = Arc::clone(&captured);
            let cap = self.config.output_cap_bytes;
            std::thread::spawn(move || {
                let mut buf = [0u8; 8192];
                let mut truncated = false;
                loop {
                    match reader.read(&mut buf) {
                        Ok(0) | Err(_) => break,
                        Ok(n) => {
                            let mut out = captured.lock().unwrap();
                            let room = cap.saturating_sub(out.len());
                            out.extend_from_slice(&buf[..n.min(room)]);
                            truncated |= n > room;
                        }
                    }
                }
                let _ = done_tx.send(truncated);
            });
        }

        let deadline = start + Duration::from_secs_f64(timeout_s.max(0.0));
        let mut timed_out = false;
        let status = loop {
            match child.try_wait().map_err(io_err("waiting for child"))? {
                Some(s) => break Some(s),
                None if Instant::now() >= deadline => {
                    timed_out = true;
                    kill_group(pgid);
                    break child.wait().ok();
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        };
        // Reap anything the child left running in its group.
        kill_group(pgid);
        let duration = start.elapsed();
        let truncated = done_rx.recv_timeout(Duration::from_secs(2)).unwrap_or(false);
        let bytes = std::mem::take(&mut *captured.lock().unwrap());
        let mut output = String::from_utf8_lossy(&bytes).into_owned();
        let root = ws.root.to_string_lossy();
        if !root.is_empty() {
            output = output.replace(root.as_ref(), ".");
        }
        if truncated {
            output.push_str("\n[output truncated]");
        }
        Ok(RawRun { status, timed_out, output, duration })
    }
}

struct RawRun {
    status: Option<ExitStatus>,
    timed_out: bool,
    output: String,
    duration: Duration,
}

fn kill_group(pgid: i32) {
    // SAFETY: kill(2) with a negative pid only signals that process group.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn substitute(template: &[String], pairs: &[(&str, &str)]) -> Vec<String> {
    template
        .iter()
        .map(|arg| pairs.iter().fold(arg.clone(), |acc, (k, v)| acc.replace(k, v)))
        .collect()
}

/// Maps a test process termination onto a status. Total over all inputs.
pub fn classify(status: Option<&ExitStatus>, timed_out: bool) -> TestStatus {
    if timed_out {
        return TestStatus::Timeout;
    }
    match status.and_then(ExitStatus::code) {
        Some(0) => TestStatus::Passed,
        Some(1) => TestStatus::Failed,
        _ => TestStatus::Crash,
    }
}

fn describe_exit(status: &Option<ExitStatus>, timed_out: bool, timeout_s: f64) -> String {
    if timed_out {
        return format!("timed out after {timeout_s} s");
    }
    match status {
        Some(s) => match (s.code(), s.signal()) {
            (Some(c), _) => format!("exited with code {c} and no output"),
            (None, Some(sig)) => format!("killed by signal {sig}"),
            _ => "terminated abnormally".into(),
        },
        None => "terminated abnormally".into(),
    }
}
