//! Benchmark loading, reference-suite evaluation and pass@k metrics.
//!
//! Benchmark layout:
//!
//! ```text
//! <root>/manifest.json          {"tasks": ["<id>", ...]}
//! <root>/<id>/description.txt   docstring body
//! <root>/<id>/signature.txt     function signature line
//! <root>/<id>/entrypoint.c      source appended to the generated function
//! <root>/<id>/cwe.txt           optional, e.g. "CWE-78"
//! <root>/<id>/test_func.py      functionality suite
//! <root>/<id>/test_sec.py       security suite
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cwe::CweId;
use crate::sandbox::{Sandbox, SandboxError, TestStatus};
use crate::workflow::{CodingTask, TestSuite};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("task {task}: missing {file}")]
    MissingFile { task: String, file: &'static str },
    #[error("task {task}: {message}")]
    Invalid { task: String, message: String },
    #[error("task {0} listed twice in the manifest")]
    DuplicateId(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    tasks: Vec<String>,
}

pub fn load_benchmark(root: &Path) -> Result<Vec<CodingTask>, BenchmarkError> {
    let manifest_path = root.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|source| BenchmarkError::Io { path: manifest_path.clone(), source })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| BenchmarkError::Manifest { path: manifest_path.clone(), message: e.to_string() })?;
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for id in manifest.tasks {
        if !seen.insert(id.clone()) {
            return Err(BenchmarkError::DuplicateId(id));
        }
        tasks.push(load_task(&root.join(&id), id)?);
    }
    Ok(tasks)
}

fn load_task(dir: &Path, id: String) -> Result<CodingTask, BenchmarkError> {
    let read = |file: &'static str| -> Result<Option<String>, BenchmarkError> {
        let path = dir.join(file);
        match std::fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(BenchmarkError::Io { path, source }),
        }
    };
    let need = |file: &'static str| -> Result<String, BenchmarkError> {
        read(file)?.ok_or_else(|| BenchmarkError::MissingFile { task: id.clone(), file })
    };
    let description = need("description.txt")?;
    let signature = need("signature.txt")?.trim().to_string();
    let entrypoint = need("entrypoint.c")?;
    let func = need("test_func.py")?;
    let sec = need("test_sec.py")?;
    if description.trim().is_empty() || signature.is_empty() {
        return Err(BenchmarkError::Invalid { task: id, message: "empty description or signature".into() });
    }
    let ground_truth_cwe = match read("cwe.txt")? {
        Some(s) => Some(s.trim().parse::<CweId>().map_err(|e| BenchmarkError::Invalid {
            task: id.clone(),
            message: format!("cwe.txt: {e}"),
        })?),
        None => None,
    };
    Ok(CodingTask {
        id,
        description,
        signature,
        entrypoint,
        ground_truth_cwe,
        reference_func_tests: Some(TestSuite::reference(func)),
        reference_sec_tests: Some(TestSuite::reference(sec)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub task_id: String,
    pub sample_idx: u32,
    pub functional: bool,
    pub secure: bool,
    pub func_sec: bool,
}

impl SampleVerdict {
    pub fn new(task_id: impl Into<String>, sample_idx: u32, functional: bool, secure: bool) -> Self {
        Self { task_id: task_id.into(), sample_idx, functional, secure, func_sec: functional && secure }
    }
}

/// Runs both reference suites against `code`. Missing code (an aborted
/// run) counts as neither functional nor secure. The security suite runs
/// even when the functionality suite fails.
pub fn evaluate_sample(
    sandbox: &Sandbox,
    task: &CodingTask,
    sample_idx: u32,
    code: Option<&str>,
) -> Result<SampleVerdict, SandboxError> {
    let Some(code) = code else {
        return Ok(SampleVerdict::new(&task.id, sample_idx, false, false));
    };
    let passes = |suite: &Option<TestSuite>| -> Result<bool, SandboxError> {
        match suite {
            Some(s) => Ok(sandbox.execute(code, &task.entrypoint, &s.script)?.status == TestStatus::Passed),
            None => Ok(false),
        }
    };
    let functional = passes(&task.reference_func_tests)?;
    let secure = passes(&task.reference_sec_tests)?;
    Ok(SampleVerdict::new(&task.id, sample_idx, functional, secure))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("invalid pass@k arguments n={n} c={c} k={k}")]
    Range { n: u64, c: u64, k: u64 },
    #[error("tasks have different sample counts: {first_task} has {first}, {task} has {n}")]
    InconsistentN { first_task: String, first: usize, task: String, n: usize },
    #[error("k={k} exceeds samples per task n={n}")]
    KTooLarge { k: u64, n: u64 },
    #[error("no verdicts")]
    Empty,
}

fn binomial(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Unbiased pass@k estimator `1 - C(n-c, k) / C(n, k)`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, MetricError> {
    if c > n || k == 0 || k > n {
        return Err(MetricError::Range { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    if let (Some(total), Some(miss)) = (binomial(n, k), binomial(n - c, k)) {
        return Ok((total - miss) as f64 / total as f64);
    }
    // Product form for large n.
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: u64,
    pub func: f64,
    pub func_sec: f64,
    /// `func_sec / func`, absent when `func` is zero.
    pub ratio: Option<f64>,
}

impl AtK {
    fn new(k: u64, func: f64, func_sec: f64) -> Self {
        let ratio = (func > 0.0).then(|| func_sec / func);
        Self { k, func, func_sec, ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: String,
    pub functional: u64,
    pub func_sec: u64,
    pub at_k: Vec<AtK>,
}

/// CWE prediction made during one sample's run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CwePrediction {
    pub task_id: String,
    pub sample_idx: u32,
    pub ground_truth: Option<CweId>,
    pub predicted: Vec<CweId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub ks: Vec<u64>,
    pub tasks: Vec<TaskMetrics>,
    pub aggregate: Vec<AtK>,
    /// Share of samples with a known ground truth whose predicted list
    /// contains it; absent when no such sample exists.
    pub cwe_recall: Option<f64>,
    pub mean_predicted_cwes: Option<f64>,
}

pub fn compute_report(
    verdicts: &[SampleVerdict],
    predictions: &[CwePrediction],
    ks: &[u64],
) -> Result<MetricsReport, MetricError> {
    let mut by_task: BTreeMap<&str, Vec<&SampleVerdict>> = BTreeMap::new();
    for v in verdicts {
        by_task.entry(&v.task_id).or_default().push(v);
    }
    let (first_task, first) = by_task.iter().next().map(|(t, v)| (*t, v.len())).ok_or(MetricError::Empty)?;
    for (task, vs) in &by_task {
        if vs.len() != first {
            return Err(MetricError::InconsistentN {
                first_task: first_task.into(),
                first,
                task: (*task).into(),
                n: vs.len(),
            });
        }
    }
    let n = first as u64;
    let mut ks: Vec<u64> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if let Some(&k) = ks.iter().find(|&&k| k > n || k == 0) {
        return Err(MetricError::KTooLarge { k, n });
    }

    let mut tasks = Vec::with_capacity(by_task.len());
    for (task, vs) in &by_task {
        let functional = vs.iter().filter(|v| v.functional).count() as u64;
        let func_sec = vs.iter().filter(|v| v.func_sec).count() as u64;
        let at_k = ks
            .iter()
            .map(|&k| Ok(AtK::new(k, pass_at_k(n, functional, k)?, pass_at_k(n, func_sec, k)?)))
            .collect::<Result<Vec<_>, MetricError>>()?;
        tasks.push(TaskMetrics { task_id: (*task).into(), functional, func_sec, at_k });
    }

    let count = tasks.len() as f64;
    let aggregate = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let func = tasks.iter().map(|t| t.at_k[i].func).sum::<f64>() / count;
            let func_sec = tasks.iter().map(|t| t.at_k[i].func_sec).sum::<f64>() / count;
            AtK::new(k, func, func_sec)
        })
        .collect();

    let scored: Vec<_> = predictions.iter().filter_map(|p| p.ground_truth.map(|gt| p.predicted.contains(&gt))).collect();
    let cwe_recall = (!scored.is_empty()).then(|| scored.iter().filter(|&&hit| hit).count() as f64 / scored.len() as f64);
    let mean_predicted_cwes = (!predictions.is_empty())
        .then(|| predictions.iter().map(|p| p.predicted.len()).sum::<usize>() as f64 / predictions.len() as f64);

    Ok(MetricsReport { n, ks, tasks, aggregate, cwe_recall, mean_predicted_cwes })
}

impl MetricsReport {
    /// Aligned text table: one row per task plus the mean row.
    pub fn to_table(&self) -> String {
        let id_w = self.tasks.iter().map(|t| t.task_id.len()).max().unwrap_or(4).max(4);
        let mut out = String::new();
        let _ = write!(out, "{:<id_w$}", "task");
        for k in &self.ks {
            let _ = write!(out, "  {:>8}  {:>12}  {:>17}", format!("Func@{k}"), format!("Func-Sec@{k}"), format!("Func-Sec/Func@{k}"));
        }
        out.push('\n');
        let row = |out: &mut String, name: &str, at_k: &[AtK]| {
            let _ = write!(out, "{name:<id_w$}");
            for a in at_k {
                let ratio = a.ratio.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {:>8.3}  {:>12.3}  {:>17}", a.func, a.func_sec, ratio);
            }
            out.push('\n');
        };
        for t in &self.tasks {
            row(&mut out, &t.task_id, &t.at_k);
        }
        row(&mut out, "mean", &self.aggregate);
        let _ = writeln!(out, "samples per task: {}", self.n);
        if let Some(r) = self.cwe_recall {
            let _ = writeln!(out, "CWE recall: {r:.3}");
        }
        if let Some(m) = self.mean_predicted_cwes {
            let _ = writeln!(out, "mean predicted CWEs: {m:.2}");
        }
        out
    }
}
