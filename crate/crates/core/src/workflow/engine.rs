use std::fmt::Display;
use std::sync::Arc;

use crate::cwe::CweId;
use crate::gateway::{ChatResponse, Exchange, Gateway, GatewayError, Role, Turn};
use crate::guidelines::{Guideline, GuidelineSet};
use crate::prompts::{
    extract_code_block, extract_cwe_list, extract_yes_no, render_prompt, render_task_prompt, PromptBindings, StageTag,
};
use crate::sandbox::{Sandbox, SandboxError, TestStatus};

use super::transcript::{Event, RevisionAction, WorkflowTranscript};
use super::{CodeSample, CodingTask, GuidanceMode, TestOrigin, TestSuite, WorkflowConfig};

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("sandbox: {0}")]
    Sandbox(#[from] SandboxError),
    #[error("{stage} produced no usable output: {source}")]
    NoOutput {
        stage: StageTag,
        #[source]
        source: GatewayError,
    },
    #[error("task {0} has no reference functionality tests")]
    MissingReferenceTests(String),
}

impl WorkflowError {
    pub fn is_infrastructure(&self) -> bool {
        matches!(self, WorkflowError::Gateway(_) | WorkflowError::Sandbox(_))
    }
}

/// Shared, immutable pieces of a workflow: sandbox, guideline database and
/// configuration. One engine serves any number of concurrent runs.
#[derive(Debug, Clone)]
pub struct Engine {
    sandbox: Sandbox,
    guidelines: Arc<GuidelineSet>,
    config: WorkflowConfig,
}

impl Engine {
    pub fn new(sandbox: Sandbox, guidelines: Arc<GuidelineSet>, config: WorkflowConfig) -> Self {
        Self { sandbox, guidelines, config }
    }

    pub fn config(&self) -> &WorkflowConfig {
        &self.config
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    /// Opens a run for one sample without executing anything yet.
    pub fn start<'a>(&'a self, gateway: &'a Gateway, task: &'a CodingTask, sample_idx: u32) -> Run<'a> {
        let events = vec![Event::RunStarted {
            task_id: task.id.clone(),
            sample_idx,
            model_id: gateway.model_id().to_string(),
            config: self.config.clone(),
        }];
        Run {
            engine: self,
            gateway,
            task,
            events,
            gen_prompt: None,
            code_count: 0,
            test_count: 0,
            verified: None,
        }
    }

    /// Runs the whole workflow. Unrecoverable errors end the transcript
    /// with an `aborted` event instead of a `finished` one.
    pub fn run_workflow(&self, gateway: &Gateway, task: &CodingTask, sample_idx: u32) -> WorkflowTranscript {
        let mut run = self.start(gateway, task, sample_idx);
        match run.drive() {
            Ok(code) => {
                let verified = run.verified;
                run.events.push(Event::Finished {
                    verified,
                    revision_index: code.revision_index,
                    final_code: code.source,
                });
            }
            Err(e) => {
                tracing::error!(task = %task.id, sample_idx, error = %e, "workflow aborted");
                run.events.push(Event::Aborted { error: e.to_string(), infrastructure: e.is_infrastructure() });
            }
        }
        run.into_transcript()
    }
}

/// State of one workflow run.
pub struct Run<'a> {
    engine: &'a Engine,
    gateway: &'a Gateway,
    task: &'a CodingTask,
    events: Vec<Event>,
    gen_prompt: Option<String>,
    code_count: u32,
    test_count: u32,
    verified: Option<bool>,
}

impl<'a> Run<'a> {
    pub fn transcript(&self) -> WorkflowTranscript {
        WorkflowTranscript { events: self.events.clone() }
    }

    pub fn into_transcript(self) -> WorkflowTranscript {
        WorkflowTranscript { events: self.events }
    }

    fn config(&self) -> &WorkflowConfig {
        &self.engine.config
    }

    fn drive(&mut self) -> Result<CodeSample, WorkflowError> {
        let cfg = self.config().clone();
        let mut code = self.gen_code()?;
        let mut tests = if cfg.oracle_unit_tests {
            Some(self.reference_tests()?)
        } else if cfg.revise_code {
            Some(self.gen_tests()?)
        } else {
            None
        };
        if cfg.revise_code {
            let t = tests.take().expect("tests prepared when revising");
            let (c, t) = self.enforce_func(code, t)?;
            code = c;
            tests = Some(t);
        }

        match cfg.guidance_mode {
            GuidanceMode::None => {}
            GuidanceMode::Guidelines => {
                let cwes = self.predict_cwe(&code)?;
                let store = Arc::clone(&self.engine.guidelines);
                let found = store.lookup(&cwes);
                self.events.push(Event::GuidelinesRetrieved { ids: found.iter().map(|g| g.id.clone()).collect() });
                if found.is_empty() {
                    tracing::info!(task = %self.task.id, "no guidelines retrieved; keeping prepared code");
                }
                for guideline in found {
                    if self.check_relevance(&code, guideline)? {
                        code = self.guided_modify(code, guideline)?;
                        if let Some(t) = tests.take() {
                            let (c, t) = self.enforce_func(code, t)?;
                            code = c;
                            tests = Some(t);
                        }
                    }
                }
            }
            GuidanceMode::CweDescription => {
                let cwes = self.predict_cwe(&code)?;
                for cwe in cwes {
                    if self.cwe_vulnerable(&code, cwe)? {
                        code = self.cwe_modify(code, cwe)?;
                        if let Some(t) = tests.take() {
                            let (c, t) = self.enforce_func(code, t)?;
                            code = c;
                            tests = Some(t);
                        }
                    }
                }
            }
        }
        Ok(code)
    }

    /// Sends one prompt through the gateway, logging every exchange.
    /// Soft failures (refusals, truncation, unparseable replies after the
    /// retry budget) come back as `Ok(Err(_))` for the caller to degrade.
    fn ask<T, E: Display>(
        &mut self,
        stage: StageTag,
        prompt: String,
        history: Vec<Turn>,
        parse: impl FnMut(&ChatResponse) -> Result<T, E>,
    ) -> Result<Result<T, GatewayError>, WorkflowError> {
        let request = self.gateway.request(stage, prompt, history);
        let digest = request.digest();
        let events = &mut self.events;
        let mut observe = |x: Exchange<'_>| {
            events.push(Event::LlmExchange {
                stage,
                prompt_digest: digest.clone(),
                attempt: x.attempt,
                finish_state: x.response.finish_state,
                response_text: x.response.text.clone(),
            })
        };
        match self.gateway.complete_with(&request, parse, &mut observe) {
            Ok(v) => Ok(Ok(v)),
            Err(e) if e.is_soft() => Ok(Err(e)),
            Err(e) => Err(e.into()),
        }
    }

    fn warn(&mut self, stage: StageTag, message: String) {
        tracing::warn!(task = %self.task.id, %stage, "{message}");
        self.events.push(Event::Warning { stage: Some(stage), message });
    }

    fn task_prompt(&self) -> String {
        render_task_prompt(&self.task.description, &self.task.signature, false)
    }

    fn bindings(&self) -> PromptBindings {
        PromptBindings::new().with("task_description", self.task_prompt())
    }

    fn render(stage: StageTag, bindings: &PromptBindings) -> String {
        render_prompt(stage, bindings).expect("engine binds every placeholder")
    }

    fn new_code(&mut self, source: String, origin: StageTag) -> CodeSample {
        let sample = CodeSample { source, origin, revision_index: self.code_count };
        self.code_count += 1;
        self.events.push(Event::CodeGenerated {
            stage: origin,
            revision_index: sample.revision_index,
            source: sample.source.clone(),
        });
        sample
    }

    fn new_tests(&mut self, script: String, origin: TestOrigin) -> TestSuite {
        let suite = TestSuite { script, origin, generation_index: self.test_count };
        self.test_count += 1;
        self.events.push(Event::TestsGenerated {
            origin,
            generation_index: suite.generation_index,
            script: suite.script.clone(),
        });
        suite
    }

    pub fn gen_code(&mut self) -> Result<CodeSample, WorkflowError> {
        let description =
            render_task_prompt(&self.task.description, &self.task.signature, self.config().security_reminder);
        let prompt = Self::render(StageTag::GenCode, &PromptBindings::new().with("task_description", description));
        let stage = StageTag::GenCode;
        match self.ask(stage, prompt.clone(), Vec::new(), |r| extract_code_block(&r.text))? {
            Ok(src) => {
                self.gen_prompt = Some(prompt);
                Ok(self.new_code(src, stage))
            }
            Err(source) => Err(WorkflowError::NoOutput { stage, source }),
        }
    }

    /// The prompt text for test generation, using the sandbox file names.
    pub fn gen_tests_prompt(&self) -> String {
        let layout = self.engine.sandbox.layout();
        let bindings = self
            .bindings()
            .with("task_file_name", layout.task_file_name.as_str())
            .with("executable_file_name", layout.executable_file_name.as_str())
            .with("test_file_name", layout.test_file_name.as_str())
            .with("entrypoint", self.task.entrypoint.as_str());
        Self::render(StageTag::GenTests, &bindings)
    }

    pub fn gen_tests(&mut self) -> Result<TestSuite, WorkflowError> {
        let stage = StageTag::GenTests;
        let prompt = self.gen_tests_prompt();
        match self.ask(stage, prompt, Vec::new(), |r| extract_code_block(&r.text))? {
            Ok(script) => Ok(self.new_tests(script, TestOrigin::LlmGenerated)),
            Err(source) => Err(WorkflowError::NoOutput { stage, source }),
        }
    }

    fn reference_tests(&mut self) -> Result<TestSuite, WorkflowError> {
        let suite = self
            .task
            .reference_func_tests
            .as_ref()
            .ok_or_else(|| WorkflowError::MissingReferenceTests(self.task.id.clone()))?;
        Ok(self.new_tests(suite.script.clone(), TestOrigin::Reference))
    }

    pub fn predict_cwe(&mut self, code: &CodeSample) -> Result<Vec<CweId>, WorkflowError> {
        let stage = StageTag::PredictCwe;
        if self.config().oracle_cwes {
            let cwes: Vec<CweId> = self.task.ground_truth_cwe.into_iter().collect();
            if cwes.is_empty() {
                self.warn(stage, format!("task {} has no ground-truth CWE", self.task.id));
            }
            self.events.push(Event::CwesPredicted { cwes: cwes.clone(), oracle: true });
            return Ok(cwes);
        }
        let prompt = Self::render(stage, &self.bindings().with("code", code.source.as_str()));
        let cwes = match self.ask(stage, prompt, Vec::new(), |r| Ok::<_, std::convert::Infallible>(extract_cwe_list(&r.text)))? {
            Ok(cwes) => cwes,
            Err(e) => {
                self.warn(stage, format!("no CWE prediction: {e}"));
                Vec::new()
            }
        };
        self.events.push(Event::CwesPredicted { cwes: cwes.clone(), oracle: false });
        Ok(cwes)
    }

    fn yes_no(&mut self, stage: StageTag, prompt: String, fallback: bool) -> Result<Option<bool>, WorkflowError> {
        match self.ask(stage, prompt, Vec::new(), |r| extract_yes_no(&r.text))? {
            Ok(v) => Ok(Some(v)),
            Err(e) => {
                let as_word = if fallback { "yes" } else { "no" };
                self.warn(stage, format!("undecidable reply, treating as {as_word}: {e}"));
                Ok(None)
            }
        }
    }

    pub fn check_relevance(&mut self, code: &CodeSample, guideline: &Guideline) -> Result<bool, WorkflowError> {
        let stage = StageTag::CheckRelevance;
        let bindings = self.bindings().with("code", code.source.as_str()).with("guideline", guideline.text.as_str());
        let relevant = self.yes_no(stage, Self::render(stage, &bindings), false)?.unwrap_or(false);
        self.events.push(Event::Relevance { guideline_id: guideline.id.clone(), relevant });
        Ok(relevant)
    }

    /// Rewrites `code` with a single-turn prompt; keeps `code` unchanged if
    /// no code block comes back.
    fn modify(&mut self, stage: StageTag, code: CodeSample, bindings: PromptBindings) -> Result<CodeSample, WorkflowError> {
        let prompt = Self::render(stage, &bindings.with("code", code.source.as_str()));
        match self.ask(stage, prompt, Vec::new(), |r| extract_code_block(&r.text))? {
            Ok(src) => Ok(self.new_code(src, stage)),
            Err(e) => {
                self.warn(stage, format!("keeping previous code: {e}"));
                Ok(code)
            }
        }
    }

    pub fn guided_modify(&mut self, code: CodeSample, guideline: &Guideline) -> Result<CodeSample, WorkflowError> {
        let bindings = self.bindings().with("guideline", guideline.text.as_str());
        self.modify(StageTag::GuidedModify, code, bindings)
    }

    fn cwe_vulnerable(&mut self, code: &CodeSample, cwe: CweId) -> Result<bool, WorkflowError> {
        let stage = StageTag::CweDescCheck;
        let bindings = self.bindings().with("code", code.source.as_str()).with("cwe_with_description", cwe.with_description());
        let vulnerable = self.yes_no(stage, Self::render(stage, &bindings), false)?.unwrap_or(false);
        self.events.push(Event::CweVulnerability { cwe, vulnerable });
        Ok(vulnerable)
    }

    fn cwe_modify(&mut self, code: CodeSample, cwe: CweId) -> Result<CodeSample, WorkflowError> {
        let bindings = self.bindings().with("cwe_with_description", cwe.with_description());
        self.modify(StageTag::CweDescModify, code, bindings)
    }

    /// Conversation prefix for code revision: the generation prompt and the
    /// current code as the assistant's answer.
    fn revision_history(&self, code: &CodeSample) -> Vec<Turn> {
        let prompt = self.gen_prompt.clone().unwrap_or_default();
        vec![
            Turn { role: Role::User, content: prompt },
            Turn { role: Role::Assistant, content: format!("```c\n{}\n```", code.source) },
        ]
    }

    /// Runs the tests up to `max_att` times, revising the code or
    /// regenerating the tests between failing runs. Returns the latest pair.
    pub fn enforce_func(&mut self, code: CodeSample, tests: TestSuite) -> Result<(CodeSample, TestSuite), WorkflowError> {
        let max_att = self.config().max_att;
        let mut code = code;
        let mut tests = tests;
        let mut history = self.revision_history(&code);
        for attempt in 1..=max_att {
            let outcome = self.engine.sandbox.execute(&code.source, &self.task.entrypoint, &tests.script)?;
            self.events.push(Event::TestRun {
                attempt,
                revision_index: code.revision_index,
                generation_index: tests.generation_index,
                status: outcome.status,
                diagnostics: outcome.diagnostics.clone(),
            });
            if outcome.status == TestStatus::Passed {
                self.verified = Some(true);
                return Ok((code, tests));
            }
            self.verified = Some(false);
            if attempt == max_att {
                break;
            }

            let action = if self.config().oracle_unit_tests {
                self.events.push(Event::Arbitration { necessary: None, action: RevisionAction::ReviseCode });
                RevisionAction::ReviseCode
            } else {
                let necessary = self.arbitrate(&tests, &outcome.diagnostics)?;
                let action = match necessary {
                    Some(false) if self.config().revise_tests => RevisionAction::RegenerateTests,
                    _ => RevisionAction::ReviseCode,
                };
                self.events.push(Event::Arbitration { necessary, action });
                action
            };

            match action {
                RevisionAction::ReviseCode => {
                    code = self.revise_code(code, &tests, &outcome.diagnostics, &mut history)?;
                }
                RevisionAction::RegenerateTests => match self.gen_tests() {
                    Ok(t) => tests = t,
                    Err(WorkflowError::NoOutput { source, .. }) => {
                        self.warn(StageTag::GenTests, format!("keeping previous tests: {source}"));
                    }
                    Err(e) => return Err(e),
                },
            }
        }
        Ok((code, tests))
    }

    fn arbitrate(&mut self, tests: &TestSuite, error: &str) -> Result<Option<bool>, WorkflowError> {
        let stage = StageTag::Arbitration;
        let bindings = self.bindings().with("unit_tests", tests.script.as_str()).with("error", error);
        self.yes_no(stage, Self::render(stage, &bindings), true)
    }

    fn revise_code(
        &mut self,
        code: CodeSample,
        tests: &TestSuite,
        error: &str,
        history: &mut Vec<Turn>,
    ) -> Result<CodeSample, WorkflowError> {
        let stage = StageTag::ReviseCode;
        let bindings = PromptBindings::new().with("unit_tests", tests.script.as_str()).with("error", error);
        let prompt = Self::render(stage, &bindings);
        let reply = self.ask(stage, prompt.clone(), history.clone(), |r| {
            extract_code_block(&r.text).map(|src| (src, r.text.clone()))
        })?;
        match reply {
            Ok((src, text)) => {
                history.push(Turn { role: Role::User, content: prompt });
                history.push(Turn { role: Role::Assistant, content: text });
                Ok(self.new_code(src, stage))
            }
            Err(e) => {
                self.warn(stage, format!("keeping previous code: {e}"));
                Ok(code)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FinishState, ScriptedBackend};
    use crate::sandbox::SandboxConfig;
    use crate::workflow::Preset;

    const PASSING_TESTS: &str = "import sys\nsys.exit(0)\n";
    const FAILING_TESTS: &str = "import sys\nprint('expected 2, got 1')\nsys.exit(1)\n";

    fn task() -> CodingTask {
        CodingTask {
            id: "t".into(),
            description: "Return two.".into(),
            signature: "int two(void)".into(),
            entrypoint: "int main(void) { return two() == 2 ? 0 : 1; }".into(),
            ground_truth_cwe: Some(CweId::new(918).unwrap()),
            reference_func_tests: Some(TestSuite::reference(PASSING_TESTS)),
            reference_sec_tests: None,
        }
    }

    fn engine(config: WorkflowConfig, guidelines: GuidelineSet) -> Engine {
        Engine::new(Sandbox::new(SandboxConfig::default()), Arc::new(guidelines), config)
    }

    fn fenced(s: &str) -> String {
        format!("Here:\n```c\n{s}\n```")
    }

    /// Replies by stage; `tests` supplies successive generated suites.
    fn persona(arbitration: &'static str, tests: Vec<&'static str>) -> Gateway {
        let mut tests = tests.into_iter();
        let backend = ScriptedBackend::new(move |req| {
            let text = match req.stage {
                StageTag::GenCode | StageTag::ReviseCode | StageTag::GuidedModify | StageTag::CweDescModify => {
                    fenced("int two(void) { return 2; }")
                }
                StageTag::GenTests => format!("```python\n{}```", tests.next().unwrap_or(PASSING_TESTS)),
                StageTag::Arbitration => arbitration.into(),
                StageTag::PredictCwe => "CWE-20 and CWE-120".into(),
                StageTag::CheckRelevance | StageTag::CweDescCheck => "Yes".into(),
            };
            ChatResponse::complete(text)
        });
        Gateway::new(Arc::new(backend), "persona")
    }

    #[test]
    fn a0_makes_one_generation_call_only() {
        let e = engine(Preset::A0.config(), GuidelineSet::builtin());
        let g = persona("yes", vec![]);
        let t = e.run_workflow(&g, &task(), 0);
        assert_eq!(t.llm_calls(StageTag::GenCode), 1);
        assert_eq!(t.events.len(), 4, "{t:#?}");
        assert_eq!(t.test_runs(), 0);
        assert!(t.predicted_cwes().is_none());
        assert_eq!(t.verified(), None);
        assert_eq!(t.final_code(), Some("int two(void) { return 2; }"));
    }

    #[test]
    fn always_failing_tests_spend_the_budget() {
        let e = engine(Preset::A4.config(), GuidelineSet::builtin());
        let g = persona("Yes", vec![]);
        let task = task();
        let mut run = e.start(&g, &task, 0);
        let code = run.gen_code().unwrap();
        let tests = TestSuite { script: FAILING_TESTS.into(), origin: TestOrigin::LlmGenerated, generation_index: 0 };
        let (code, _) = run.enforce_func(code, tests).unwrap();
        let t = run.transcript();
        assert_eq!(t.test_runs(), 3);
        assert_eq!(t.llm_calls(StageTag::ReviseCode), 2);
        assert_eq!(t.llm_calls(StageTag::Arbitration), 2);
        assert_eq!(code.revision_index, 2);
    }

    #[test]
    fn passing_first_run_returns_inputs() {
        let e = engine(Preset::A4.config(), GuidelineSet::builtin());
        let g = persona("Yes", vec![]);
        let task = task();
        let mut run = e.start(&g, &task, 0);
        let code = run.gen_code().unwrap();
        let tests = TestSuite::reference(PASSING_TESTS);
        let (c2, t2) = run.enforce_func(code.clone(), tests.clone()).unwrap();
        assert_eq!((c2, t2), (code, tests));
        assert_eq!(run.transcript().test_runs(), 1);
    }

    #[test]
    fn no_regenerates_tests_when_allowed() {
        let e = engine(Preset::A4.config(), GuidelineSet::builtin());
        let g = persona("No, the test is wrong.", vec![PASSING_TESTS]);
        let task = task();
        let mut run = e.start(&g, &task, 0);
        let code = run.gen_code().unwrap();
        let tests = TestSuite { script: FAILING_TESTS.into(), origin: TestOrigin::LlmGenerated, generation_index: 0 };
        run.test_count = 1;
        let (c2, t2) = run.enforce_func(code.clone(), tests).unwrap();
        assert_eq!(c2, code);
        assert_eq!(t2.generation_index, 1);
        assert_eq!(t2.script, PASSING_TESTS.trim_end());
        let t = run.transcript();
        assert_eq!(t.arbitrations(RevisionAction::RegenerateTests), 1);
        assert_eq!(t.llm_calls(StageTag::GenTests), 1);
        assert_eq!(t.test_runs(), 2);
    }

    #[test]
    fn no_without_test_revision_revises_code() {
        let e = engine(Preset::A3.config(), GuidelineSet::builtin());
        let g = persona("no", vec![]);
        let task = task();
        let mut run = e.start(&g, &task, 0);
        let code = run.gen_code().unwrap();
        let tests = TestSuite { script: FAILING_TESTS.into(), origin: TestOrigin::LlmGenerated, generation_index: 0 };
        run.enforce_func(code, tests).unwrap();
        let t = run.transcript();
        assert_eq!(t.llm_calls(StageTag::GenTests), 0);
        assert_eq!(t.llm_calls(StageTag::ReviseCode), 2);
    }

    #[test]
    fn revise_code_threads_the_generation_turn() {
        let backend = Arc::new(ScriptedBackend::new(|req| match req.stage {
            StageTag::Arbitration => ChatResponse::complete("yes"),
            _ => ChatResponse::complete(fenced("int two(void) { return 1; }")),
        }));
        let g = Gateway::new(backend.clone(), "m");
        let e = engine(Preset::A4.config(), GuidelineSet::builtin());
        let task = task();
        let mut run = e.start(&g, &task, 0);
        let code = run.gen_code().unwrap();
        let tests = TestSuite { script: FAILING_TESTS.into(), origin: TestOrigin::LlmGenerated, generation_index: 0 };
        run.enforce_func(code, tests).unwrap();
        let revs: Vec<_> = backend.requests().into_iter().filter(|r| r.stage == StageTag::ReviseCode).collect();
        assert_eq!(revs.len(), 2);
        assert_eq!(revs[0].history.len(), 2);
        assert_eq!(revs[1].history.len(), 4);
        assert!(revs[0].history[0].content.starts_with("I have a task below"));
        assert!(revs[0].prompt_text.contains("expected 2, got 1"));
        assert!(revs.iter().all(|r| r.prompt_text.starts_with("Here are a set of unit tests")));
    }

    #[test]
    fn undecidable_relevance_is_no_with_warning() {
        let backend = ScriptedBackend::new(|req| match req.stage {
            StageTag::CheckRelevance => ChatResponse::complete("maybe"),
            _ => ChatResponse::complete(fenced("int two(void) { return 2; }")),
        });
        let g = Gateway::new(Arc::new(backend), "m");
        let e = engine(Preset::A2.config(), GuidelineSet::builtin());
        let task = task();
        let mut run = e.start(&g, &task, 0);
        let code = run.gen_code().unwrap();
        let store = GuidelineSet::builtin();
        let gl = store.lookup(&[CweId::new(78).unwrap()])[0];
        assert!(!run.check_relevance(&code, gl).unwrap());
        let t = run.transcript();
        assert_eq!(t.warnings().count(), 1);
        assert_eq!(t.events.iter().filter(|e| matches!(e, Event::LlmExchange { .. })).count(), 1 + 3);
    }

    #[test]
    fn guided_modify_without_block_keeps_code() {
        let backend = ScriptedBackend::new(|req| match req.stage {
            StageTag::GenCode => ChatResponse::complete(fenced("int two(void) { return 2; }")),
            _ => ChatResponse::complete("I would rather not."),
        });
        let g = Gateway::new(Arc::new(backend), "m");
        let e = engine(Preset::A2.config(), GuidelineSet::builtin());
        let task = task();
        let mut run = e.start(&g, &task, 0);
        let code = run.gen_code().unwrap();
        let store = GuidelineSet::builtin();
        let gl = store.lookup(&[CweId::new(78).unwrap()])[0];
        let out = run.guided_modify(code.clone(), gl).unwrap();
        assert_eq!(out, code);
    }

    #[test]
    fn guided_modify_increments_revision() {
        let e = engine(Preset::A2.config(), GuidelineSet::builtin());
        let g = persona("yes", vec![]);
        let task = task();
        let mut run = e.start(&g, &task, 0);
        let code = run.gen_code().unwrap();
        let store = GuidelineSet::builtin();
        let gl = store.lookup(&[CweId::new(78).unwrap()])[0];
        let out = run.guided_modify(code.clone(), gl).unwrap();
        assert_eq!(out.revision_index, code.revision_index + 1);
        assert_eq!(out.origin, StageTag::GuidedModify);
    }

    #[test]
    fn gen_tests_prompt_uses_workspace_names() {
        let e = engine(Preset::A4.config(), GuidelineSet::builtin());
        let g = persona("yes", vec![]);
        let task = task();
        let run = e.start(&g, &task, 0);
        let p = run.gen_tests_prompt();
        let layout = e.sandbox().layout();
        assert!(p.contains(&format!("stored in the file {},", layout.task_file_name)));
        assert!(p.contains(&format!("compiled into the executable {}.", layout.executable_file_name)));
        assert!(p.contains(&format!("'python3 {}'", layout.test_file_name)));
        assert!(p.contains(&task.entrypoint));
    }

    #[test]
    fn successive_test_generations_increase() {
        let e = engine(Preset::A4.config(), GuidelineSet::builtin());
        let g = persona("yes", vec![]);
        let task = task();
        let mut run = e.start(&g, &task, 0);
        let a = run.gen_tests().unwrap();
        let b = run.gen_tests().unwrap();
        assert!(b.generation_index > a.generation_index);
    }

    #[test]
    fn oracle_modes_skip_prediction_and_test_generation() {
        let e = engine(Preset::A6.config(), GuidelineSet::builtin());
        let g = persona("yes", vec![]);
        let t = e.run_workflow(&g, &task(), 0);
        assert_eq!(t.aborted(), None, "{t:#?}");
        assert_eq!(t.llm_calls(StageTag::PredictCwe), 0);
        assert_eq!(t.llm_calls(StageTag::GenTests), 0);
        assert_eq!(t.predicted_cwes().unwrap(), &[CweId::new(918).unwrap()]);
        assert_eq!(t.verified(), Some(true));
    }

    #[test]
    fn full_a4_run_respects_work_bounds() {
        let e = engine(Preset::A4.config(), GuidelineSet::builtin());
        let g = persona("yes", vec![FAILING_TESTS, FAILING_TESTS, FAILING_TESTS, FAILING_TESTS]);
        let t = e.run_workflow(&g, &task(), 0);
        assert_eq!(t.aborted(), None);
        let retrieved = t
            .events
            .iter()
            .find_map(|e| match e {
                Event::GuidelinesRetrieved { ids } => Some(ids.len()),
                _ => None,
            })
            .unwrap();
        assert!(retrieved > 0);
        assert!(t.test_runs() <= 3 * (retrieved + 1));
        assert!(t.llm_calls(StageTag::GuidedModify) <= retrieved);
        assert_eq!(t.verified(), Some(false));
    }

    #[test]
    fn a1_checks_each_predicted_cwe() {
        let e = engine(Preset::A1.config(), GuidelineSet::builtin());
        let g = persona("yes", vec![]);
        let t = e.run_workflow(&g, &task(), 0);
        assert_eq!(t.llm_calls(StageTag::CweDescCheck), 2);
        assert_eq!(t.llm_calls(StageTag::CweDescModify), 2);
        assert_eq!(t.llm_calls(StageTag::CheckRelevance), 0);
    }

    #[test]
    fn prose_only_generation_aborts() {
        let g = Gateway::new(Arc::new(ScriptedBackend::constant("no code today")), "m");
        let e = engine(Preset::A0.config(), GuidelineSet::builtin());
        let t = e.run_workflow(&g, &task(), 0);
        assert!(t.aborted().unwrap().contains("gen_code"));
        assert!(!t.infrastructure_failure());
        assert_eq!(t.llm_calls(StageTag::GenCode), 1);
        assert_eq!(t.events.iter().filter(|e| matches!(e, Event::LlmExchange { .. })).count(), 3);
        assert!(t.final_code().is_none());
    }

    #[test]
    fn hard_gateway_errors_abort_with_partial_transcript() {
        struct Down;
        impl crate::gateway::ChatBackend for Down {
            fn send(&self, _: &crate::gateway::ChatRequest) -> Result<ChatResponse, GatewayError> {
                Err(GatewayError::Transport("connection refused".into()))
            }
        }
        let g = Gateway::new(Arc::new(Down), "m");
        let e = engine(Preset::A4.config(), GuidelineSet::builtin());
        let t = e.run_workflow(&g, &task(), 0);
        assert_eq!(t.events.len(), 2);
        assert!(t.aborted().unwrap().contains("connection refused"));
        assert!(t.infrastructure_failure());
    }

    #[test]
    fn truncated_replies_are_logged_per_attempt() {
        let mut n = 0;
        let backend = ScriptedBackend::new(move |_| {
            n += 1;
            if n == 1 {
                ChatResponse { finish_state: FinishState::Truncated, ..ChatResponse::complete("```c\nint") }
            } else {
                ChatResponse::complete(fenced("int two(void) { return 2; }"))
            }
        });
        let g = Gateway::new(Arc::new(backend), "m");
        let e = engine(Preset::A0.config(), GuidelineSet::builtin());
        let t = e.run_workflow(&g, &task(), 0);
        assert_eq!(t.llm_calls(StageTag::GenCode), 1);
        assert!(matches!(t.events[1], Event::LlmExchange { attempt: 1, finish_state: FinishState::Truncated, .. }));
        assert!(matches!(t.events[2], Event::LlmExchange { attempt: 2, .. }));
    }
}
