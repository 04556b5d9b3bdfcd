//! Run-directory layout and atomic file writes.
//!
//! ```text
//! <run_dir>/<task_id>/<sample_idx>/transcript.jsonl
//! <run_dir>/<task_id>/<sample_idx>/final_code.c
//! <run_dir>/<task_id>/<sample_idx>/final_tests.py
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::workflow::WorkflowTranscript;

pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const FINAL_CODE_FILE: &str = "final_code.c";
pub const FINAL_TESTS_FILE: &str = "final_tests.py";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("transcript has no run_started event")]
    Unlabelled,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` via a temporary file in the same directory
/// and a rename, so readers see either the old file or the new one.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    atomic_write_with(path, bytes, |from, to| std::fs::rename(from, to))
}

/// [`atomic_write`] with the final rename supplied by the caller.
pub fn atomic_write_with(
    path: &Path,
    bytes: &[u8],
    rename: impl FnOnce(&Path, &Path) -> std::io::Result<()>,
) -> Result<(), PersistError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut tmp = tempfile::Builder::new().prefix(".tmp-").tempfile_in(dir).map_err(io(dir))?;
    tmp.write_all(bytes).map_err(io(tmp.path()))?;
    tmp.as_file().sync_all().map_err(io(tmp.path()))?;
    // On failure the temporary is removed when `tmp` drops.
    rename(tmp.path(), path).map_err(io(path))?;
    let _ = tmp.into_temp_path().keep();
    Ok(())
}

pub fn sample_dir(run_dir: &Path, task_id: &str, sample_idx: u32) -> PathBuf {
    run_dir.join(task_id).join(sample_idx.to_string())
}

/// Persists a transcript and its final artifacts; returns the sample
/// directory.
pub fn persist_transcript(transcript: &WorkflowTranscript, run_dir: &Path) -> Result<PathBuf, PersistError> {
    let task_id = transcript.task_id().ok_or(PersistError::Unlabelled)?;
    let sample_idx = transcript.sample_idx().ok_or(PersistError::Unlabelled)?;
    let dir = sample_dir(run_dir, task_id, sample_idx);
    atomic_write(&dir.join(TRANSCRIPT_FILE), transcript.to_jsonl().as_bytes())?;
    if let Some(code) = transcript.final_code() {
        atomic_write(&dir.join(FINAL_CODE_FILE), code.as_bytes())?;
    }
    if let Some(tests) = transcript.final_tests() {
        atomic_write(&dir.join(FINAL_TESTS_FILE), tests.as_bytes())?;
    }
    Ok(dir)
}

pub fn load_transcript(path: &Path) -> Result<WorkflowTranscript, PersistError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    WorkflowTranscript::from_jsonl(&text).map_err(|(line, e)| PersistError::Malformed {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    })
}

/// All transcripts under `run_dir`, ordered by task id then sample index.
pub fn load_run(run_dir: &Path) -> Result<Vec<WorkflowTranscript>, PersistError> {
    let mut found = Vec::new();
    let tasks = std::fs::read_dir(run_dir).map_err(io(run_dir))?;
    for task in tasks {
        let task = task.map_err(io(run_dir))?.path();
        if !task.is_dir() {
            continue;
        }
        for sample in std::fs::read_dir(&task).map_err(io(&task))? {
            let sample = sample.map_err(io(&task))?.path();
            let file = sample.join(TRANSCRIPT_FILE);
            if file.is_file() {
                found.push(load_transcript(&file)?);
            }
        }
    }
    found.sort_by(|a, b| (a.task_id(), a.sample_idx()).cmp(&(b.task_id(), b.sample_idx())));
    Ok(found)
}
