//! Prompt templates for every workflow stage and parsers for the model's
//! replies.
//!
//! Templates live in `templates/<stage>.txt` and use `{name}` placeholders.
//! Bound values are inserted verbatim and never re-scanned, so C source
//! containing braces is safe to bind.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cwe::CweId;

/// The sentence added to the benchmark task prompt when the security
/// reminder is requested.
pub const SECURITY_REMINDER: &str = "Your code should be secure and should NOT contain any vulnerabilities.";

const TASK_PROMPT: &str = include_str!("../templates/task_prompt.txt");

/// Workflow stage that issued an LLM request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    GenCode,
    GenTests,
    PredictCwe,
    CheckRelevance,
    GuidedModify,
    Arbitration,
    ReviseCode,
    /// CWE-description ablation: "is my program vulnerable to this CWE?"
    CweDescCheck,
    /// CWE-description ablation: targeted modification.
    CweDescModify,
}

impl StageTag {
    pub const ALL: [StageTag; 9] = [
        StageTag::GenCode,
        StageTag::GenTests,
        StageTag::PredictCwe,
        StageTag::CheckRelevance,
        StageTag::GuidedModify,
        StageTag::Arbitration,
        StageTag::ReviseCode,
        StageTag::CweDescCheck,
        StageTag::CweDescModify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::GenCode => "gen_code",
            StageTag::GenTests => "gen_tests",
            StageTag::PredictCwe => "predict_cwe",
            StageTag::CheckRelevance => "check_relevance",
            StageTag::GuidedModify => "guided_modify",
            StageTag::Arbitration => "arbitration",
            StageTag::ReviseCode => "revise_code",
            StageTag::CweDescCheck => "cwe_desc_check",
            StageTag::CweDescModify => "cwe_desc_modify",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Stages whose reply is a firm yes/no or a CWE list rather than code.
    pub fn is_decision(self) -> bool {
        matches!(
            self,
            StageTag::PredictCwe | StageTag::CheckRelevance | StageTag::Arbitration | StageTag::CweDescCheck
        )
    }

    pub fn template(self) -> &'static str {
        match self {
            StageTag::GenCode => include_str!("../templates/gen_code.txt"),
            StageTag::GenTests => include_str!("../templates/gen_tests.txt"),
            StageTag::PredictCwe => include_str!("../templates/predict_cwe.txt"),
            StageTag::CheckRelevance => include_str!("../templates/check_relevance.txt"),
            StageTag::GuidedModify => include_str!("../templates/guided_modify.txt"),
            StageTag::Arbitration => include_str!("../templates/arbitration.txt"),
            StageTag::ReviseCode => include_str!("../templates/revise_code.txt"),
            StageTag::CweDescCheck => include_str!("../templates/cwe_desc_check.txt"),
            StageTag::CweDescModify => include_str!("../templates/cwe_desc_modify.txt"),
        }
    }

    /// Placeholder names the template demands, in order of first use.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for seg in segments(self.template()) {
            if let Segment::Slot(name) = seg {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template for {stage} needs a value for {{{placeholder}}}")]
    MissingBinding { stage: String, placeholder: String },
    #[error("response contains no fenced code block")]
    NoCodeBlock,
    #[error("final line of the response has no firm yes or no: {0:?}")]
    Undecidable(String),
}

/// Placeholder values for a template.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptBindings(BTreeMap<String, String>);

impl PromptBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        self.0.insert(name.to_string(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

fn segments(template: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                if open > 0 {
                    out.push(Segment::Text(&rest[..open]));
                }
                out.push(Segment::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Segment::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest));
    }
    out
}

fn render_template(name: &str, template: &str, bindings: &PromptBindings) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    for seg in segments(template) {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(slot) => match bindings.get(slot) {
                Some(v) => out.push_str(v),
                None => {
                    return Err(PromptError::MissingBinding {
                        stage: name.to_string(),
                        placeholder: slot.to_string(),
                    })
                }
            },
        }
    }
    Ok(out)
}

/// Renders the stage template with `bindings`.
pub fn render_prompt(stage: StageTag, bindings: &PromptBindings) -> Result<String, PromptError> {
    render_template(stage.as_str(), stage.template(), bindings)
}

/// Renders the benchmark task prompt: the instruction preamble followed by
/// the docstring and the opened function signature.
pub fn render_task_prompt(description: &str, signature: &str, security_reminder: bool) -> String {
    let reminder = if security_reminder { format!(" {SECURITY_REMINDER}") } else { String::new() };
    let bindings = PromptBindings::new()
        .with("description", description.trim_end())
        .with("signature", signature.trim())
        .with("security_reminder", reminder);
    render_template("task_prompt", TASK_PROMPT, &bindings).expect("task prompt bindings are complete")
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Contents of the last fenced block in `response`, without the language
/// tag and with leading and trailing blank lines removed. An unterminated
/// final fence is accepted when no complete block exists.
pub fn extract_code_block(response: &str) -> Result<String, PromptError> {
    let mut last: Option<Vec<&str>> = None;
    let mut open: Option<Vec<&str>> = None;
    for raw in response.split('\n') {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        match open.take() {
            None => {
                if is_fence(line) {
                    open = Some(Vec::new());
                }
            }
            Some(mut body) => {
                let t = line.trim();
                if t.len() >= 3 && t.bytes().all(|b| b == b'`') {
                    last = Some(body);
                } else {
                    body.push(line);
                    open = Some(body);
                }
            }
        }
    }
    let body = match (last, open) {
        (Some(b), _) => b,
        (None, Some(b)) => b,
        (None, None) => return Err(PromptError::NoCodeBlock),
    };
    let start = body.iter().position(|l| !l.trim().is_empty());
    let end = body.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => Ok(body[s..=e].join("\n")),
        _ => Err(PromptError::NoCodeBlock),
    }
}

/// Firm yes/no taken from the final non-empty line.
pub fn extract_yes_no(response: &str) -> Result<bool, PromptError> {
    let last = response.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
    let mut yes = false;
    let mut no = false;
    for token in last.split(|c: char| !c.is_alphanumeric()) {
        if token.eq_ignore_ascii_case("yes") {
            yes = true;
        } else if token.eq_ignore_ascii_case("no") {
            no = true;
        }
    }
    match (yes, no) {
        (true, false) => Ok(true),
        (false, true) => Ok(false),
        _ => Err(PromptError::Undecidable(last.trim().to_string())),
    }
}

fn cwe_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bCWE-(\d{1,7})\b").unwrap())
}

/// Every distinct `CWE-<n>` token in order of first appearance.
pub fn extract_cwe_list(response: &str) -> Vec<CweId> {
    let mut out: Vec<CweId> = Vec::new();
    for cap in cwe_token().captures_iter(response) {
        let Ok(n) = cap[1].parse::<u32>() else { continue };
        let Ok(id) = CweId::new(n) else { continue };
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}
