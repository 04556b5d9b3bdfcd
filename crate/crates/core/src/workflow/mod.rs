//! The generate, retrieve and improve workflow.

mod engine;
mod transcript;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cwe::CweId;
use crate::prompts::StageTag;

pub use engine::{Engine, WorkflowError};
pub use transcript::{Event, RevisionAction, WorkflowTranscript};

/// One benchmark item.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingTask {
    pub id: String,
    /// Docstring body shown to the model.
    pub description: String,
    /// Function signature line, without the opening brace.
    pub signature: String,
    /// Source appended to the generated function so it can be executed.
    pub entrypoint: String,
    pub ground_truth_cwe: Option<CweId>,
    pub reference_func_tests: Option<TestSuite>,
    pub reference_sec_tests: Option<TestSuite>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSample {
    pub source: String,
    pub origin: StageTag,
    pub revision_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOrigin {
    LlmGenerated,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuite {
    pub script: String,
    pub origin: TestOrigin,
    pub generation_index: u32,
}

impl TestSuite {
    pub fn reference(script: impl Into<String>) -> Self {
        Self { script: script.into(), origin: TestOrigin::Reference, generation_index: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    None,
    CweDescription,
    Guidelines,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowConfig {
    pub guidance_mode: GuidanceMode,
    pub revise_code: bool,
    pub revise_tests: bool,
    pub oracle_cwes: bool,
    pub oracle_unit_tests: bool,
    pub max_att: u32,
    pub security_reminder: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("max_att must be at least 1")]
    ZeroAttempts,
    #[error("revise_tests requires revise_code")]
    TestsWithoutCode,
    #[error("oracle_unit_tests requires revise_code")]
    OracleTestsWithoutRevision,
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_att == 0 {
            return Err(ConfigError::ZeroAttempts);
        }
        if self.revise_tests && !self.revise_code {
            return Err(ConfigError::TestsWithoutCode);
        }
        if self.oracle_unit_tests && !self.revise_code {
            return Err(ConfigError::OracleTestsWithoutRevision);
        }
        Ok(())
    }
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Preset::A4.config()
    }
}

/// Named ablation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    A0,
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
}

impl Preset {
    pub const ALL: [Preset; 7] = [Preset::A0, Preset::A1, Preset::A2, Preset::A3, Preset::A4, Preset::A5, Preset::A6];

    pub fn config(self) -> WorkflowConfig {
        let base = WorkflowConfig {
            guidance_mode: GuidanceMode::Guidelines,
            revise_code: true,
            revise_tests: true,
            oracle_cwes: false,
            oracle_unit_tests: false,
            max_att: 3,
            security_reminder: false,
        };
        match self {
            Preset::A0 => WorkflowConfig { guidance_mode: GuidanceMode::None, revise_code: false, revise_tests: false, ..base },
            Preset::A1 => {
                WorkflowConfig { guidance_mode: GuidanceMode::CweDescription, revise_code: false, revise_tests: false, ..base }
            }
            Preset::A2 => WorkflowConfig { revise_code: false, revise_tests: false, ..base },
            Preset::A3 => WorkflowConfig { revise_tests: false, ..base },
            Preset::A4 => base,
            Preset::A5 => WorkflowConfig { oracle_cwes: true, ..base },
            Preset::A6 => WorkflowConfig { oracle_cwes: true, oracle_unit_tests: true, ..base },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown preset {s:?}; expected one of A0..A6"))
    }
}
