//! Sample fan-out, persistence and reporting shared by the subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use sgen_core::eval::{compute_report, evaluate_sample, load_benchmark, CwePrediction, MetricsReport, SampleVerdict};
use sgen_core::gateway::{
    CassetteWriter, ChatBackend, Gateway, GatewayError, LiveBackend, RecordingBackend, ReplayBackend,
};
use sgen_core::guidelines::GuidelineSet;
use sgen_core::persist::{atomic_write, persist_transcript};
use sgen_core::sandbox::{Sandbox, SandboxConfig};
use sgen_core::workflow::{CodingTask, Engine, Event, WorkflowTranscript};

use crate::config::{BackendKind, RunConfig};

pub const CONFIG_ECHO: &str = "config.toml";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const VERDICTS_JSON: &str = "verdicts.json";

/// Failure classes that map onto process exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or inputs: exit 1.
    Usage(anyhow::Error),
    /// Backend, sandbox or filesystem failure during a run, or a replay
    /// that does not verify: exit 2.
    Run(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Run(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Run(e) => write!(f, "{e:#}"),
        }
    }
}

pub fn usage<T>(r: Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

pub fn run_err<T>(r: Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Run)
}

/// Builds the chat backend for one sample.
pub type BackendFactory<'a> = dyn Fn(&CodingTask, u32) -> Result<Arc<dyn ChatBackend>, GatewayError> + Sync + 'a;

pub fn cassette_path(dir: &Path, task_id: &str, sample_idx: u32) -> PathBuf {
    dir.join(task_id).join(format!("{sample_idx}.jsonl"))
}

/// Everything loaded before any sample runs.
pub struct Session {
    pub cfg: RunConfig,
    pub run_dir: PathBuf,
    pub tasks: Vec<CodingTask>,
    pub engine: Engine,
    pub eval_sandbox: Sandbox,
}

impl Session {
    pub fn prepare(cfg: RunConfig) -> Result<Self, Failure> {
        usage(cfg.validate())?;
        let bench = cfg.benchmark.clone().ok_or_else(|| Failure::Usage(anyhow!("no benchmark given (--benchmark)")))?;
        let tasks = usage(load_benchmark(&bench).with_context(|| format!("loading benchmark {}", bench.display())))?;
        let workflow = cfg.workflow_config();
        if workflow.oracle_unit_tests {
            if let Some(t) = tasks.iter().find(|t| t.reference_func_tests.is_none()) {
                return Err(Failure::Usage(anyhow!("task {} has no reference tests for oracle mode", t.id)));
            }
        }
        let guidelines = match &cfg.guidelines {
            Some(p) => usage(GuidelineSet::load(p).with_context(|| format!("loading guidelines {}", p.display())))?,
            None => GuidelineSet::builtin(),
        };
        let run_dir = match &cfg.run_dir {
            Some(d) => d.clone(),
            None => {
                let secs = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                PathBuf::from(format!("runs/run-{secs}"))
            }
        };
        let run_dir = usage(std::path::absolute(&run_dir).context("resolving run directory"))?;
        let mut sandbox_cfg = cfg.sandbox.clone();
        if cfg.keep_workspaces && sandbox_cfg.keep_workspaces_in.is_none() {
            sandbox_cfg.keep_workspaces_in = Some(run_dir.join("workspaces"));
        }
        let eval_sandbox = Sandbox::new(SandboxConfig { keep_workspaces_in: None, ..sandbox_cfg.clone() });
        let engine = Engine::new(Sandbox::new(sandbox_cfg), Arc::new(guidelines), workflow);
        Ok(Self { cfg, run_dir, tasks, engine, eval_sandbox })
    }

    pub fn task(&self, id: &str) -> Result<&CodingTask, Failure> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Failure::Usage(anyhow!("unknown task id {id:?}")))
    }

    /// Creates the run directory and echoes the effective configuration
    /// into it, with every path made absolute.
    pub fn open_run_dir(&self) -> Result<(), Failure> {
        if self.run_dir.join(CONFIG_ECHO).exists() {
            return Err(Failure::Usage(anyhow!("run directory {} already holds a run", self.run_dir.display())));
        }
        let mut echo = self.cfg.clone();
        echo.run_dir = Some(self.run_dir.clone());
        for p in [&mut echo.cassette, &mut echo.benchmark, &mut echo.guidelines, &mut echo.sandbox.keep_workspaces_in]
            .into_iter()
            .flatten()
        {
            *p = p.canonicalize().or_else(|_| std::path::absolute(&*p)).unwrap_or_else(|_| p.clone());
        }
        if echo.backend == BackendKind::Record && echo.cassette.is_none() {
            echo.cassette = Some(self.run_dir.join("cassettes"));
        }
        usage(atomic_write(&self.run_dir.join(CONFIG_ECHO), echo.to_toml().as_bytes()).map_err(Into::into))
    }

    /// The backend factory the configuration asks for.
    pub fn backend_factory(&self) -> Result<Box<BackendFactory<'static>>, Failure> {
        let mode = self.cfg.cassette_mode;
        match self.cfg.backend {
            BackendKind::Replay => {
                let dir = self.cfg.cassette.clone().expect("validated");
                Ok(Box::new(move |task, idx| {
                    let backend = ReplayBackend::open(&cassette_path(&dir, &task.id, idx), mode)?;
                    Ok(Arc::new(backend) as Arc<dyn ChatBackend>)
                }))
            }
            BackendKind::Live => {
                let live: Arc<dyn ChatBackend> = Arc::new(usage(LiveBackend::from_env(&self.cfg.live).map_err(Into::into))?);
                Ok(Box::new(move |_, _| Ok(Arc::clone(&live))))
            }
            BackendKind::Record => {
                let live: Arc<dyn ChatBackend> = Arc::new(usage(LiveBackend::from_env(&self.cfg.live).map_err(Into::into))?);
                let dir = self.cfg.cassette.clone().unwrap_or_else(|| self.run_dir.join("cassettes"));
                Ok(Box::new(move |task, idx| {
                    let writer = CassetteWriter::create(&cassette_path(&dir, &task.id, idx))?;
                    Ok(Arc::new(RecordingBackend::new(Arc::clone(&live), writer)) as Arc<dyn ChatBackend>)
                }))
            }
        }
    }

    /// Asks on stdin before running code from a live model, when the
    /// configuration requires it.
    pub fn confirm(&self) -> Result<(), Failure> {
        if !self.cfg.require_confirmation || self.cfg.backend == BackendKind::Replay {
            return Ok(());
        }
        eprint!(
            "Generated code will be compiled and executed with your user privileges, without isolation.\nContinue? [y/N] "
        );
        let mut line = String::new();
        usage(std::io::stdin().read_line(&mut line).map_err(Into::into))?;
        match line.trim().to_ascii_lowercase().as_str() {
            "y" | "yes" => Ok(()),
            _ => Err(Failure::Usage(anyhow!("aborted at confirmation prompt"))),
        }
    }

    fn gateway(&self, backend: Arc<dyn ChatBackend>) -> Gateway {
        Gateway::new(backend, self.cfg.model.clone()).with_sampling(self.cfg.sampling).with_retries(self.cfg.retries)
    }

    /// Runs `n` samples of each task, persisting each transcript as it
    /// completes, and evaluates final code when `evaluate` is set and the
    /// task has reference suites.
    pub fn run_samples(
        &self,
        tasks: &[&CodingTask],
        factory: &BackendFactory<'_>,
        evaluate: bool,
    ) -> Result<Vec<SampleResult>, Failure> {
        let jobs: Vec<(&CodingTask, u32)> =
            tasks.iter().flat_map(|t| (0..self.cfg.n).map(move |i| (*t, i))).collect();
        let pool = run_err(
            rayon::ThreadPoolBuilder::new().num_threads(self.cfg.parallel).build().context("starting worker pool"),
        )?;
        let results: Vec<Result<SampleResult, Failure>> =
            pool.install(|| jobs.par_iter().map(|&(task, idx)| self.run_one(task, idx, factory, evaluate)).collect());
        results.into_iter().collect()
    }

    fn run_one(
        &self,
        task: &CodingTask,
        idx: u32,
        factory: &BackendFactory<'_>,
        evaluate: bool,
    ) -> Result<SampleResult, Failure> {
        let transcript = match factory(task, idx) {
            Ok(backend) => self.engine.run_workflow(&self.gateway(backend), task, idx),
            Err(e) => WorkflowTranscript {
                events: vec![
                    Event::RunStarted {
                        task_id: task.id.clone(),
                        sample_idx: idx,
                        model_id: self.cfg.model.clone(),
                        config: self.engine.config().clone(),
                    },
                    Event::Aborted { error: format!("backend setup: {e}"), infrastructure: true },
                ],
            },
        };
        if let Some(err) = transcript.aborted() {
            eprintln!("{} sample {idx}: aborted: {err}", task.id);
        }
        run_err(persist_transcript(&transcript, &self.run_dir).map_err(Into::into))?;
        let verdict = if evaluate && task.reference_func_tests.is_some() {
            Some(run_err(
                evaluate_sample(&self.eval_sandbox, task, idx, transcript.final_code())
                    .with_context(|| format!("evaluating {} sample {idx}", task.id)),
            )?)
        } else {
            None
        };
        Ok(SampleResult { task_id: task.id.clone(), ground_truth: task.ground_truth_cwe, transcript, verdict })
    }
}

pub struct SampleResult {
    pub task_id: String,
    pub ground_truth: Option<sgen_core::cwe::CweId>,
    pub transcript: WorkflowTranscript,
    pub verdict: Option<SampleVerdict>,
}

pub fn predictions(results: &[SampleResult]) -> Vec<CwePrediction> {
    results
        .iter()
        .filter_map(|r| {
            Some(CwePrediction {
                task_id: r.task_id.clone(),
                sample_idx: r.transcript.sample_idx()?,
                ground_truth: r.ground_truth,
                predicted: r.transcript.predicted_cwes()?.to_vec(),
            })
        })
        .collect()
}

/// Computes and writes the report files; returns the report.
pub fn write_report(run_dir: &Path, results: &[SampleResult], ks: &[u64]) -> Result<MetricsReport, Failure> {
    let verdicts: Vec<SampleVerdict> = results.iter().filter_map(|r| r.verdict.clone()).collect();
    let report = run_err(compute_report(&verdicts, &predictions(results), ks).map_err(Into::into))?;
    let json = |v: &dyn erased::Json| v.pretty();
    run_err(atomic_write(&run_dir.join(VERDICTS_JSON), json(&verdicts).as_bytes()).map_err(Into::into))?;
    run_err(atomic_write(&run_dir.join(REPORT_JSON), json(&report).as_bytes()).map_err(Into::into))?;
    run_err(atomic_write(&run_dir.join(REPORT_TXT), report.to_table().as_bytes()).map_err(Into::into))?;
    Ok(report)
}

mod erased {
    pub trait Json {
        fn pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn pretty(&self) -> String {
            let mut s = serde_json::to_string_pretty(self).expect("serializable");
            s.push('\n');
            s
        }
    }
}
