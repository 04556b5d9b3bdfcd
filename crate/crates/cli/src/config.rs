//! Run configuration: defaults, then the TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sgen_core::gateway::{CassetteMode, LiveConfig, SamplingConfig, DEFAULT_RETRIES};
use sgen_core::sandbox::SandboxConfig;
use sgen_core::workflow::{GuidanceMode, Preset, WorkflowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Record,
    Replay,
}

/// Optional per-field overrides applied on top of the preset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance_mode: Option<GuidanceMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub revise_code: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub revise_tests: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_cwes: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_unit_tests: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_att: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub security_reminder: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    pub backend: BackendKind,
    /// Directory of per-sample cassettes, `<task_id>/<sample_idx>.jsonl`.
    pub cassette: Option<PathBuf>,
    pub cassette_mode: CassetteMode,
    pub benchmark: Option<PathBuf>,
    /// Guideline file; the built-in database when absent.
    pub guidelines: Option<PathBuf>,
    pub n: u32,
    pub ks: Vec<u64>,
    pub preset: Preset,
    pub retries: u32,
    /// Output directory; a fresh `runs/run-<unix seconds>` when absent.
    pub run_dir: Option<PathBuf>,
    pub parallel: usize,
    pub keep_workspaces: bool,
    pub require_confirmation: bool,
    pub workflow: WorkflowOverrides,
    pub sampling: SamplingConfig,
    pub sandbox: SandboxConfig,
    pub live: LiveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            backend: BackendKind::Live,
            cassette: None,
            cassette_mode: CassetteMode::default(),
            benchmark: None,
            guidelines: None,
            n: 5,
            ks: vec![1, 5],
            preset: Preset::A4,
            retries: DEFAULT_RETRIES,
            run_dir: None,
            parallel: 1,
            keep_workspaces: false,
            require_confirmation: false,
            workflow: WorkflowOverrides::default(),
            sampling: SamplingConfig::default(),
            sandbox: SandboxConfig::default(),
            live: LiveConfig::default(),
        }
    }
}

/// Command-line values that override the file. `None` leaves the file
/// value in place.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Workflow preset, A0 through A6.
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum, global = true)]
    pub backend: Option<BackendKind>,
    /// Cassette directory for replay or record.
    #[arg(long, global = true)]
    pub cassette: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub benchmark: Option<PathBuf>,
    #[arg(long, global = true)]
    pub guidelines: Option<PathBuf>,
    /// Samples per task.
    #[arg(long, global = true)]
    pub n: Option<u32>,
    /// k for pass@k; repeat for several.
    #[arg(long = "k", global = true)]
    pub ks: Vec<u64>,
    /// Add the security reminder sentence to the generation prompt.
    #[arg(long, global = true)]
    pub security_reminder: bool,
    #[arg(long, global = true)]
    pub max_att: Option<u32>,
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub keep_workspaces: bool,
    /// Concurrent samples.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Ask before running generated code produced by a live model.
    #[arg(long, global = true)]
    pub require_confirmation: bool,
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.cassette,
            &mut self.benchmark,
            &mut self.guidelines,
            &mut self.run_dir,
            &mut self.sandbox.keep_workspaces_in,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Defaults, then `--config`, then flags.
    pub fn resolve(flags: &Overrides) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        Ok(cfg)
    }

    pub fn apply(&mut self, flags: &Overrides) {
        if let Some(p) = flags.preset {
            self.preset = p;
        }
        if let Some(b) = flags.backend {
            self.backend = b;
        }
        if let Some(c) = &flags.cassette {
            self.cassette = Some(c.clone());
        }
        if let Some(m) = &flags.model {
            self.model = m.clone();
        }
        if let Some(b) = &flags.benchmark {
            self.benchmark = Some(b.clone());
        }
        if let Some(g) = &flags.guidelines {
            self.guidelines = Some(g.clone());
        }
        if let Some(n) = flags.n {
            self.n = n;
        }
        if !flags.ks.is_empty() {
            self.ks = flags.ks.clone();
        }
        if flags.security_reminder {
            self.workflow.security_reminder = Some(true);
        }
        if let Some(m) = flags.max_att {
            self.workflow.max_att = Some(m);
        }
        if let Some(r) = &flags.run_dir {
            self.run_dir = Some(r.clone());
        }
        if flags.keep_workspaces {
            self.keep_workspaces = true;
        }
        if let Some(p) = flags.parallel {
            self.parallel = p;
        }
        if flags.require_confirmation {
            self.require_confirmation = true;
        }
    }

    /// The preset with explicit overrides applied.
    pub fn workflow_config(&self) -> WorkflowConfig {
        let mut w = self.preset.config();
        let o = &self.workflow;
        if let Some(v) = o.guidance_mode {
            w.guidance_mode = v;
        }
        if let Some(v) = o.revise_code {
            w.revise_code = v;
        }
        if let Some(v) = o.revise_tests {
            w.revise_tests = v;
        }
        if let Some(v) = o.oracle_cwes {
            w.oracle_cwes = v;
        }
        if let Some(v) = o.oracle_unit_tests {
            w.oracle_unit_tests = v;
        }
        if let Some(v) = o.max_att {
            w.max_att = v;
        }
        if let Some(v) = o.security_reminder {
            w.security_reminder = v;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.workflow_config().validate()?;
        if self.backend == BackendKind::Replay && self.cassette.is_none() {
            bail!("backend replay needs a cassette directory (--cassette)");
        }
        if self.n == 0 {
            bail!("n must be at least 1");
        }
        if self.ks.is_empty() {
            bail!("at least one k is required");
        }
        if let Some(&k) = self.ks.iter().find(|&&k| k == 0 || k > self.n as u64) {
            bail!("k={k} must be between 1 and n={}", self.n);
        }
        if self.parallel == 0 {
            bail!("parallel must be at least 1");
        }
        Ok(())
    }

    /// The file form of this configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
