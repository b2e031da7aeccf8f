//! Run candidate scripts under the configured external interpreter and
//! extract tracebacks from the output.
//!
//! The extractor scans line by line: a line containing `File` followed by a
//! quoted path opens a record; lines are collected until one starts with an
//! identifier ending in `Error` or `Exception`, which closes it. A record
//! still open at end of output is emitted as `UnknownError`. The quoted-path
//! requirement keeps prose containing the word "File" from opening records.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::GeneratedScript;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("interpreter not found: {0}")]
    InterpreterNotFound(String),
    #[error("work dir not writable: {0}")]
    WorkDirUnwritable(PathBuf),
    #[error("failed to spawn interpreter: {0}")]
    SpawnFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One frame location parsed from a `File "...", line N` line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLocation {
    pub file: String,
    pub line: u32,
}

/// One parsed interpreter error block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracebackRecord {
    /// Verbatim collected lines, from the opening `File` line through the
    /// terminating error line.
    pub lines: Vec<String>,
    /// Identifier ending in Error/Exception; `UnknownError` for a record
    /// truncated at end of output. Synthesized records (nonzero exit with no
    /// parsable traceback, timeouts) use their own classes.
    pub error_class: String,
    pub error_message: String,
    pub locations: Vec<FrameLocation>,
}

impl TracebackRecord {
    /// The record as one verbatim text block, for correction prompts.
    pub fn as_text(&self) -> String {
        self.lines.join("\n")
    }
}

static FILE_OPENER: Lazy<Regex> = Lazy::new(|| Regex::new(r#"\bFile\s*"[^"\n]+""#).unwrap());
static FILE_LOCATION: Lazy<Regex> =
    Lazy::new(|| Regex::new(r#"\bFile\s*"(?P<file>[^"\n]+)",\s*line\s+(?P<line>\d+)"#).unwrap());
static ERROR_TERMINATOR: Lazy<Regex> = Lazy::new(|| {
    // Anchored at line start; dots allowed in the identifier. The class may
    // stand alone on the line (assertion failures print that way).
    Regex::new(r"^(?P<class>[A-Za-z_][A-Za-z0-9_.]*(?:Error|Exception))(?P<rest>[: ].*|$)").unwrap()
});

/// Scan interpreter output and return every traceback block, in input order.
/// Total: never fails, returns an empty list for clean output.
pub fn extract_tracebacks(output: &str) -> Vec<TracebackRecord> {
    let mut records = Vec::new();
    let mut current: Option<(Vec<String>, Vec<FrameLocation>)> = None;

    for line in output.lines() {
        match current.as_mut() {
            None => {
                if FILE_OPENER.is_match(line) {
                    let mut locations = Vec::new();
                    push_location(line, &mut locations);
                    current = Some((vec![line.to_string()], locations));
                }
            }
            Some((lines, locations)) => {
                lines.push(line.to_string());
                push_location(line, locations);
                if let Some(caps) = ERROR_TERMINATOR.captures(line) {
                    let class = caps["class"].to_string();
                    let message = caps
                        .name("rest")
                        .map(|m| m.as_str())
                        .unwrap_or("")
                        .trim_start_matches(':')
                        .trim()
                        .to_string();
                    let (lines, locations) = current.take().unwrap();
                    records.push(TracebackRecord {
                        lines,
                        error_class: class,
                        error_message: message,
                        locations,
                    });
                }
            }
        }
    }
    if let Some((lines, locations)) = current {
        records.push(TracebackRecord {
            lines,
            error_class: "UnknownError".into(),
            error_message: String::new(),
            locations,
        });
    }
    records
}

fn push_location(line: &str, locations: &mut Vec<FrameLocation>) {
    if let Some(caps) = FILE_LOCATION.captures(line) {
        if let Ok(line_no) = caps["line"].parse() {
            locations.push(FrameLocation { file: caps["file"].to_string(), line: line_no });
        }
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "code")]
pub enum ExitKind {
    Exited(i32),
    TimedOut,
}

/// Execution settings for one session.
#[derive(Debug, Clone)]
pub struct ExecConfig {
    /// Interpreter argv; the script path is appended as the last argument.
    pub interpreter_cmd: Vec<String>,
    /// Private directory the script runs in; artifacts are detected here.
    pub work_dir: PathBuf,
    pub timeout: Duration,
    /// File the script is expected to produce, when the task declares one.
    pub expected_artifact: Option<String>,
}

impl ExecConfig {
    pub fn new(work_dir: PathBuf) -> Self {
        Self {
            interpreter_cmd: vec!["pvpython".into()],
            work_dir,
            timeout: Duration::from_secs(300),
            expected_artifact: None,
        }
    }
}

/// Everything captured from one script run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit: ExitKind,
    pub stdout: String,
    pub stderr: String,
    pub tracebacks: Vec<TracebackRecord>,
    /// Paths (relative to the work dir, sorted) of files created during the
    /// run, excluding the script file itself.
    pub artifacts: Vec<String>,
    pub wall_time_secs: f64,
}

impl ExecutionResult {
    pub fn success(&self) -> bool {
        self.exit == ExitKind::Exited(0) && self.tracebacks.is_empty()
    }
}

fn snapshot(dir: &Path) -> BTreeSet<PathBuf> {
    let mut files = BTreeSet::new();
    for entry in walkdir::WalkDir::new(dir).into_iter().flatten() {
        if entry.file_type().is_file() {
            if let Ok(rel) = entry.path().strip_prefix(dir) {
                files.insert(rel.to_path_buf());
            }
        }
    }
    files
}

/// Write the script to a temp file in the work dir, run the interpreter on
/// it, capture output, kill at the timeout, and diff the work dir for
/// artifacts. Timeouts are reported in the result, not as errors.
pub fn run_script(script: &GeneratedScript, config: &ExecConfig) -> Result<ExecutionResult, ExecError> {
    let program = config
        .interpreter_cmd
        .first()
        .ok_or_else(|| ExecError::SpawnFailed("empty interpreter command".into()))?;

    std::fs::create_dir_all(&config.work_dir)
        .map_err(|_| ExecError::WorkDirUnwritable(config.work_dir.clone()))?;
    let script_name = unique_script_name();
    let script_path = config.work_dir.join(&script_name);
    let mut text = script.text.clone();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    std::fs::write(&script_path, text)
        .map_err(|_| ExecError::WorkDirUnwritable(config.work_dir.clone()))?;

    let before = snapshot(&config.work_dir);
    let started = Instant::now();

    let mut command = Command::new(program);
    command
        .args(&config.interpreter_cmd[1..])
        .arg(&script_name)
        .current_dir(&config.work_dir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    // Own process group, so a timeout kill reaches grandchildren too and
    // the output pipes actually close.
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    let mut child = command
        .spawn()
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ExecError::InterpreterNotFound(program.clone())
            } else {
                ExecError::SpawnFailed(e.to_string())
            }
        })?;

    // Drain both pipes on their own threads so a full pipe never deadlocks
    // the child.
    let stdout_pipe = child.stdout.take().expect("stdout piped");
    let stderr_pipe = child.stderr.take().expect("stderr piped");
    let stdout_thread = std::thread::spawn(move || read_all(stdout_pipe));
    let stderr_thread = std::thread::spawn(move || read_all(stderr_pipe));

    let mut exit = None;
    while exit.is_none() {
        match child.try_wait()? {
            Some(status) => exit = Some(ExitKind::Exited(status.code().unwrap_or(-1))),
            None => {
                if started.elapsed() >= config.timeout {
                    kill_process_tree(&mut child);
                    let _ = child.wait();
                    exit = Some(ExitKind::TimedOut);
                } else {
                    std::thread::sleep(Duration::from_millis(10));
                }
            }
        }
    }
    let exit = exit.expect("loop sets exit");
    let stdout = stdout_thread.join().unwrap_or_default();
    let stderr = stderr_thread.join().unwrap_or_default();
    let wall_time_secs = started.elapsed().as_secs_f64();

    let after = snapshot(&config.work_dir);
    let artifacts: Vec<String> = after
        .difference(&before)
        .filter(|p| p.as_os_str() != script_name.as_str())
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .collect();

    let combined = format!("{stdout}\n{stderr}");
    let mut tracebacks = extract_tracebacks(&combined);
    if tracebacks.is_empty() {
        // The correction loop needs error text to work with, so runs that
        // fail without a parsable traceback get a synthesized record.
        match exit {
            ExitKind::Exited(0) => {}
            ExitKind::Exited(code) => {
                tracebacks.push(synthesized(&combined, "NonzeroExit", format!("exit status {code}")));
            }
            ExitKind::TimedOut => {
                tracebacks.push(synthesized(
                    &combined,
                    "TimeoutError",
                    format!("script did not finish within {:.0}s", config.timeout.as_secs_f64()),
                ));
            }
        }
    }

    Ok(ExecutionResult { exit, stdout, stderr, tracebacks, artifacts, wall_time_secs })
}

fn synthesized(output: &str, class: &str, detail: String) -> TracebackRecord {
    let tail: Vec<String> = output
        .lines()
        .rev()
        .filter(|l| !l.trim().is_empty())
        .take(20)
        .map(str::to_string)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let message = if tail.is_empty() { detail.clone() } else { format!("{detail}; last output:\n{}", tail.join("\n")) };
    TracebackRecord { lines: tail, error_class: class.into(), error_message: message, locations: vec![] }
}

fn kill_process_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    unsafe {
        libc::kill(-(child.id() as i32), libc::SIGKILL);
    }
    let _ = child.kill();
}

fn read_all(mut pipe: impl Read) -> String {
    let mut buf = Vec::new();
    let _ = pipe.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).into_owned()
}

fn unique_script_name() -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    format!("candidate_{:x}_{n}.py", std::process::id())
}
