use serde::{Deserialize, Serialize};

use crate::cwe::CweId;
use crate::gateway::FinishState;
use crate::prompts::StageTag;
use crate::sandbox::TestStatus;

use super::{TestOrigin, WorkflowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionAction {
    ReviseCode,
    RegenerateTests,
}

/// One transcript record. Carries no wall-clock data so that replays
/// compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStarted {
        task_id: String,
        sample_idx: u32,
        model_id: String,
        config: WorkflowConfig,
    },
    LlmExchange {
        stage: StageTag,
        prompt_digest: String,
        attempt: u32,
        finish_state: FinishState,
        response_text: String,
    },
    CodeGenerated {
        stage: StageTag,
        revision_index: u32,
        source: String,
    },
    TestsGenerated {
        origin: TestOrigin,
        generation_index: u32,
        script: String,
    },
    TestRun {
        attempt: u32,
        revision_index: u32,
        generation_index: u32,
        status: TestStatus,
        diagnostics: String,
    },
    Arbitration {
        /// The model's answer; absent when it could not be parsed or the
        /// question was not asked.
        necessary: Option<bool>,
        action: RevisionAction,
    },
    CwesPredicted {
        cwes: Vec<CweId>,
        oracle: bool,
    },
    GuidelinesRetrieved {
        ids: Vec<String>,
    },
    Relevance {
        guideline_id: String,
        relevant: bool,
    },
    CweVulnerability {
        cwe: CweId,
        vulnerable: bool,
    },
    Warning {
        stage: Option<StageTag>,
        message: String,
    },
    Aborted {
        error: String,
        /// True for backend or sandbox failures, false when the model
        /// never produced usable output.
        infrastructure: bool,
    },
    Finished {
        /// Whether the last test run passed; absent when no tests ran.
        verified: Option<bool>,
        revision_index: u32,
        final_code: String,
    },
}

/// Ordered event log of one workflow run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowTranscript {
    pub events: Vec<Event>,
}

impl WorkflowTranscript {
    pub fn task_id(&self) -> Option<&str> {
        self.events.iter().find_map(|e| match e {
            Event::RunStarted { task_id, .. } => Some(task_id.as_str()),
            _ => None,
        })
    }

    pub fn sample_idx(&self) -> Option<u32> {
        self.events.iter().find_map(|e| match e {
            Event::RunStarted { sample_idx, .. } => Some(*sample_idx),
            _ => None,
        })
    }

    pub fn final_code(&self) -> Option<&str> {
        self.events.iter().rev().find_map(|e| match e {
            Event::Finished { final_code, .. } => Some(final_code.as_str()),
            _ => None,
        })
    }

    pub fn verified(&self) -> Option<bool> {
        self.events.iter().rev().find_map(|e| match e {
            Event::Finished { verified, .. } => Some(*verified),
            _ => None,
        })?
    }

    pub fn aborted(&self) -> Option<&str> {
        self.events.iter().find_map(|e| match e {
            Event::Aborted { error, .. } => Some(error.as_str()),
            _ => None,
        })
    }

    /// Predicted CWE list, if the run reached retrieval.
    pub fn predicted_cwes(&self) -> Option<&[CweId]> {
        self.events.iter().find_map(|e| match e {
            Event::CwesPredicted { cwes, .. } => Some(cwes.as_slice()),
            _ => None,
        })
    }

    /// Final test suite script, if the run generated or adopted one.
    pub fn final_tests(&self) -> Option<&str> {
        self.events.iter().rev().find_map(|e| match e {
            Event::TestsGenerated { script, .. } => Some(script.as_str()),
            _ => None,
        })
    }

    /// Model calls for `stage`, counting one per request rather than per
    /// retry attempt.
    pub fn llm_calls(&self, stage: StageTag) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::LlmExchange { stage: s, attempt: 1, .. } if *s == stage))
            .count()
    }

    pub fn test_runs(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::TestRun { .. })).count()
    }

    pub fn arbitrations(&self, action: RevisionAction) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Arbitration { action: a, .. } if *a == action))
            .count()
    }

    /// True when the run stopped on a backend or sandbox failure.
    pub fn infrastructure_failure(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::Aborted { infrastructure: true, .. }))
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| match e {
            Event::Warning { message, .. } => Some(message.as_str()),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses the line-per-event form; errors carry the 1-based line.
    pub fn from_jsonl(text: &str) -> Result<Self, (usize, serde_json::Error)> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line).map_err(|e| (i + 1, e))?);
        }
        Ok(Self { events })
    }
}
