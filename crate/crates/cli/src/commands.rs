//! Subcommand bodies. Each returns the text to print on success.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};

use sgen_core::eval::{compute_report, evaluate_sample, MetricsReport};
use sgen_core::guidelines;
use sgen_core::persist::{load_run, sample_dir, FINAL_CODE_FILE};

use crate::config::{BackendKind, RunConfig};
use crate::runner::{predictions, run_err, usage, write_report, Failure, SampleResult, Session, CONFIG_ECHO, REPORT_JSON};

fn infrastructure_check(results: &[SampleResult]) -> Result<(), Failure> {
    let failed: Vec<String> = results
        .iter()
        .filter(|r| r.transcript.infrastructure_failure())
        .map(|r| format!("{}/{}", r.task_id, r.transcript.sample_idx().unwrap_or(0)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(anyhow!("infrastructure failure in {} sample(s): {}", failed.len(), failed.join(", "))))
    }
}

fn sample_summary(out: &mut String, session: &Session, results: &[SampleResult]) {
    for r in results {
        let idx = r.transcript.sample_idx().unwrap_or(0);
        let state = match (r.transcript.aborted(), r.transcript.verified()) {
            (Some(e), _) => format!("aborted: {e}"),
            (None, Some(true)) => "tests passed".to_string(),
            (None, Some(false)) => "tests failing".to_string(),
            (None, None) => "no tests run".to_string(),
        };
        let verdict = match &r.verdict {
            Some(v) => format!("  functional={} secure={}", v.functional, v.secure),
            None => String::new(),
        };
        let _ = writeln!(out, "{} sample {idx}: {state}{verdict}", r.task_id);
        if r.transcript.final_code().is_some() {
            let _ = writeln!(out, "  {}", sample_dir(&session.run_dir, &r.task_id, idx).join(FINAL_CODE_FILE).display());
        }
    }
}

/// Runs the configured number of samples of one task.
pub fn run_task(cfg: RunConfig, task_id: &str) -> Result<String, Failure> {
    let session = Session::prepare(cfg)?;
    let task = session.task(task_id)?;
    session.confirm()?;
    let factory = session.backend_factory()?;
    session.open_run_dir()?;
    let results = session.run_samples(&[task], factory.as_ref(), true)?;
    let mut out = String::new();
    sample_summary(&mut out, &session, &results);
    if results.iter().any(|r| r.verdict.is_some()) {
        let report = write_report(&session.run_dir, &results, &session.cfg.ks)?;
        out.push_str(&report.to_table());
    }
    let _ = writeln!(out, "run directory: {}", session.run_dir.display());
    infrastructure_check(&results)?;
    Ok(out)
}

/// Runs every benchmark task and writes the metrics report.
pub fn bench(cfg: RunConfig) -> Result<String, Failure> {
    let session = Session::prepare(cfg)?;
    session.confirm()?;
    let factory = session.backend_factory()?;
    session.open_run_dir()?;
    let tasks: Vec<_> = session.tasks.iter().collect();
    let results = session.run_samples(&tasks, factory.as_ref(), true)?;
    let mut out = String::new();
    if results.iter().any(|r| r.verdict.is_some()) {
        out.push_str(&write_report(&session.run_dir, &results, &session.cfg.ks)?.to_table());
    } else {
        out.push_str("no task has reference tests; no report written\n");
    }
    let _ = writeln!(out, "run directory: {}", session.run_dir.display());
    infrastructure_check(&results)?;
    Ok(out)
}

/// Checks a finished run directory. The report is recomputed from the
/// persisted transcripts and compared with `report.json`; with `rerun`
/// the workflow is also replayed from the cassettes and each transcript
/// must match the persisted one event for event.
pub fn replay_verify(run_dir: &Path, rerun: bool) -> Result<String, Failure> {
    let cfg = usage(RunConfig::from_file(&run_dir.join(CONFIG_ECHO)))?;
    let persisted = usage(load_run(run_dir).with_context(|| format!("loading transcripts from {}", run_dir.display())))?;
    if persisted.is_empty() {
        return Err(Failure::Usage(anyhow!("no transcripts under {}", run_dir.display())));
    }
    let report_path = run_dir.join(REPORT_JSON);
    if !rerun && !report_path.exists() {
        return Err(Failure::Usage(anyhow!("{} has no {REPORT_JSON}; use --rerun to check transcripts", run_dir.display())));
    }
    let mut out = String::new();
    let task_ids: BTreeSet<&str> = persisted.iter().filter_map(|t| t.task_id()).collect();

    if report_path.exists() {
        let session = Session::prepare(RunConfig { run_dir: Some(run_dir.to_path_buf()), ..cfg.clone() })?;
        let mut results = Vec::new();
        for t in &persisted {
            let task = session.task(t.task_id().unwrap_or_default())?;
            let idx = t.sample_idx().unwrap_or(0);
            let verdict = match task.reference_func_tests {
                Some(_) => Some(run_err(
                    evaluate_sample(&session.eval_sandbox, task, idx, t.final_code())
                        .with_context(|| format!("evaluating {} sample {idx}", task.id)),
                )?),
                None => None,
            };
            results.push(SampleResult {
                task_id: task.id.clone(),
                ground_truth: task.ground_truth_cwe,
                transcript: t.clone(),
                verdict,
            });
        }
        let verdicts: Vec<_> = results.iter().filter_map(|r| r.verdict.clone()).collect();
        let recomputed =
            run_err(compute_report(&verdicts, &predictions(&results), &cfg.ks).map_err(anyhow::Error::from))?;
        let text = usage(std::fs::read_to_string(&report_path).with_context(|| format!("reading {}", report_path.display())))?;
        let stored: MetricsReport =
            usage(serde_json::from_str(&text).with_context(|| format!("parsing {}", report_path.display())))?;
        if recomputed != stored {
            return Err(Failure::Run(anyhow!(
                "recomputed report differs from {}\nstored:\n{}recomputed:\n{}",
                report_path.display(),
                stored.to_table(),
                recomputed.to_table()
            )));
        }
        let _ = writeln!(out, "report matches ({} samples)", persisted.len());
    }

    if rerun {
        if cfg.backend == BackendKind::Live {
            return Err(Failure::Usage(anyhow!("run used the live backend without cassettes; nothing to replay")));
        }
        let scratch = run_err(tempfile::tempdir().context("creating scratch directory"))?;
        let replay_cfg = RunConfig {
            backend: BackendKind::Replay,
            run_dir: Some(scratch.path().to_path_buf()),
            keep_workspaces: false,
            require_confirmation: false,
            ..cfg
        };
        let session = Session::prepare(replay_cfg)?;
        let tasks: Vec<_> = task_ids.iter().map(|id| session.task(id)).collect::<Result<_, _>>()?;
        let factory = session.backend_factory()?;
        let fresh = session.run_samples(&tasks, factory.as_ref(), false)?;
        let mut mismatches = Vec::new();
        for r in &fresh {
            let idx = r.transcript.sample_idx();
            let old = persisted.iter().find(|t| t.task_id() == Some(r.task_id.as_str()) && t.sample_idx() == idx);
            match old {
                Some(old) if old.events == r.transcript.events => {}
                Some(old) => {
                    let at = old.events.iter().zip(&r.transcript.events).position(|(a, b)| a != b);
                    let at = at.unwrap_or(old.events.len().min(r.transcript.events.len()));
                    mismatches.push(format!("{}/{}: first difference at event {at}", r.task_id, idx.unwrap_or(0)));
                }
                None => mismatches.push(format!("{}/{}: not in the original run", r.task_id, idx.unwrap_or(0))),
            }
        }
        if !mismatches.is_empty() {
            return Err(Failure::Run(anyhow!("replayed transcripts differ:\n{}", mismatches.join("\n"))));
        }
        let _ = writeln!(out, "replayed transcripts match ({} samples)", fresh.len());
    }
    Ok(out)
}

/// Validates a guideline file.
pub fn guidelines_lint(path: &Path) -> Result<String, Failure> {
    let text = usage(std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())))?;
    let summary = usage(guidelines::lint(&text).with_context(|| format!("{}", path.display())))?;
    Ok(format!("{}: {} guidelines covering {} CWEs\n", path.display(), summary.guidelines, summary.cwes))
}
