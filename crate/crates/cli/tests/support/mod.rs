//! Shared helpers for the CLI integration tests: fixture paths and a
//! deterministic scripted model ("persona") used to record the golden
//! cassettes.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use sgen_core::eval::load_benchmark;
use sgen_core::gateway::{ChatRequest, ChatResponse, Role, ScriptedBackend};
use sgen_core::guidelines::GuidelineSet;
use sgen_core::prompts::StageTag;
use sgen_core::workflow::{CodingTask, Preset};

pub const GOLDEN_PRESETS: [Preset; 4] = [Preset::A0, Preset::A2, Preset::A4, Preset::A6];
pub const PERSONA_MODEL: &str = "scripted-persona";

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn bench_dir() -> PathBuf {
    repo_root().join("fixtures/bench")
}

pub fn golden_dir(preset: Preset) -> PathBuf {
    repo_root().join("fixtures/golden").join(preset.to_string())
}

pub fn sgen() -> std::process::Command {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_sgen"));
    cmd.env_remove("SCG_API_KEY").env_remove("RUST_LOG");
    cmd
}

/// Known variants of one task's solution.
#[derive(Clone)]
pub struct Solutions {
    pub task: CodingTask,
    pub insecure: String,
    pub secure: String,
    /// Secure but functionally wrong; produced by the first hardening
    /// step when present.
    pub secure_buggy: Option<String>,
}

pub fn solutions() -> Vec<Solutions> {
    let root = repo_root().join("fixtures/solutions");
    load_benchmark(&bench_dir())
        .unwrap()
        .into_iter()
        .map(|task| {
            let dir = root.join(&task.id);
            let read = |f: &str| std::fs::read_to_string(dir.join(f)).ok();
            Solutions {
                insecure: read("insecure.c").unwrap(),
                secure: read("secure.c").unwrap(),
                secure_buggy: read("secure_buggy.c"),
                task,
            }
        })
        .collect()
}

fn fenced(lang: &str, body: &str) -> String {
    format!("```{lang}\n{}\n```", body.trim_end())
}

/// Tests the persona writes first for `parse_port`: one expectation
/// contradicts the description, so a correct implementation fails.
pub fn flawed_parse_port_tests(reference: &str) -> String {
    reference.replace("(\"0\", -1)", "(\"0\", 0)")
}

/// A deterministic stand-in for a chat model that knows the fixture
/// benchmark. It writes the insecure variant first (except where the
/// secure one is the natural answer), hardens code when a guideline
/// for the task's weakness is applied, and answers decisions from what
/// is actually in the prompt.
pub struct Persona {
    tasks: Vec<Solutions>,
    guidelines: GuidelineSet,
    test_generations: AtomicU32,
}

impl Persona {
    pub fn new() -> Self {
        Self { tasks: solutions(), guidelines: GuidelineSet::builtin(), test_generations: AtomicU32::new(0) }
    }

    pub fn backend(self) -> Arc<ScriptedBackend> {
        Arc::new(ScriptedBackend::new(move |req| ChatResponse::complete(self.reply(req))))
    }

    fn task_for(&self, req: &ChatRequest) -> &Solutions {
        let seen = |s: &Solutions| {
            req.prompt_text.contains(&s.task.signature) || req.history.iter().any(|t| t.content.contains(&s.task.signature))
        };
        self.tasks.iter().find(|s| seen(s)).expect("prompt names a fixture task")
    }

    /// The most recent code the prompt shows: the prompt itself for
    /// single-turn stages, the last assistant turn for revisions.
    fn shown_code<'a>(&self, req: &'a ChatRequest) -> &'a str {
        match req.stage {
            StageTag::ReviseCode => req.history.iter().rev().find(|t| t.role == Role::Assistant).map_or("", |t| &t.content),
            _ => &req.prompt_text,
        }
    }

    fn weakness_targeted(&self, s: &Solutions, prompt: &str) -> bool {
        let Some(cwe) = s.task.ground_truth_cwe else { return false };
        self.guidelines.iter().any(|g| prompt.contains(g.text.as_str()) && g.mitigates(cwe))
            || prompt.contains(&format!("CWE-{}:", cwe.number()))
    }

    pub fn reply(&self, req: &ChatRequest) -> String {
        let s = self.task_for(req);
        let shown = self.shown_code(req);
        let insecure_shown = shown.contains(s.insecure.trim_end());
        match req.stage {
            StageTag::GenCode => {
                let code = if s.task.id.contains("125") { &s.secure } else { &s.insecure };
                format!("Here is the implementation.\n\n{}\n", fenced("c", code))
            }
            StageTag::GenTests => {
                let reference = &s.task.reference_func_tests.as_ref().expect("fixture has tests").script;
                let n = self.test_generations.fetch_add(1, Ordering::SeqCst);
                let script = if s.task.id.contains("parse_port") && n == 0 {
                    flawed_parse_port_tests(reference)
                } else {
                    reference.clone()
                };
                format!("The tests run the compiled executable.\n\n{}\n", fenced("python", &script))
            }
            StageTag::Arbitration => {
                if req.prompt_text.contains("(\"0\", 0)") {
                    "The description says 0 is out of range, so that test is wrong.\n\nNo".into()
                } else {
                    "The failing tests follow the description.\n\nYes".into()
                }
            }
            StageTag::ReviseCode => {
                let buggy_shown = s.secure_buggy.as_ref().is_some_and(|b| shown.contains(b.trim_end()));
                let code = if buggy_shown || !insecure_shown { &s.secure } else { &s.insecure };
                format!("Corrected version:\n\n{}\n", fenced("c", code))
            }
            StageTag::PredictCwe => {
                let cwe = s.task.ground_truth_cwe.expect("fixture has a CWE");
                format!("The input is not fully trusted.\n\n- CWE-{}: {}\n", cwe.number(), cwe.name().unwrap_or("weakness"))
            }
            StageTag::CheckRelevance | StageTag::CweDescCheck => {
                if insecure_shown && self.weakness_targeted(s, &req.prompt_text) {
                    "The program does not do this yet.\n\nYes".into()
                } else {
                    "The program already handles this or it does not apply.\n\nNo".into()
                }
            }
            StageTag::GuidedModify | StageTag::CweDescModify => {
                let code = match &s.secure_buggy {
                    Some(b) if insecure_shown => b,
                    _ => &s.secure,
                };
                format!("Updated program:\n\n{}\n", fenced("c", code))
            }
        }
    }
}

impl Default for Persona {
    fn default() -> Self {
        Self::new()
    }
}
