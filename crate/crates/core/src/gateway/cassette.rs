//! Line-delimited JSON cassettes of recorded exchanges.
//!
//! One object per line:
//! `{"seq":0,"stage":"gen_code","prompt_digest":"…","prompt_text":"…","response_text":"…","finish_state":"complete"}`

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{prompt_digest, ChatBackend, ChatRequest, ChatResponse, FinishState, GatewayError, Usage};
use crate::prompts::StageTag;

#[derive(Debug, thiserror::Error)]
pub enum CassetteError {
    #[error("cassette {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cassette {path}: record {index}: {message}")]
    Malformed { path: PathBuf, index: usize, message: String },
    #[error("cassette {path}: record {index} repeats digest {digest} (digest_lookup mode requires unique digests)")]
    DuplicateDigest { path: PathBuf, index: usize, digest: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    /// Requests must arrive in recording order.
    #[default]
    StrictSequence,
    /// Requests are matched by digest; each entry serves once.
    DigestLookup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteEntry {
    pub seq: usize,
    pub stage: StageTag,
    pub prompt_digest: String,
    pub prompt_text: String,
    pub response_text: String,
    pub finish_state: FinishState,
}

impl CassetteEntry {
    pub fn response(&self) -> ChatResponse {
        ChatResponse { text: self.response_text.clone(), finish_state: self.finish_state, usage: Usage::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
    pub mode: CassetteMode,
}

impl Cassette {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses cassette text. Record indices are 1-based over non-blank lines.
    pub fn parse(text: &str, mode: CassetteMode, path: &Path) -> Result<Self, CassetteError> {
        let mut entries = Vec::new();
        let mut digests = HashSet::new();
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let index = i + 1;
            let malformed = |message: String| CassetteError::Malformed { path: path.to_path_buf(), index, message };
            let entry: CassetteEntry = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            let actual = prompt_digest(entry.stage, &entry.prompt_text);
            if actual != entry.prompt_digest {
                return Err(malformed(format!("prompt_digest {} does not match prompt_text", entry.prompt_digest)));
            }
            if mode == CassetteMode::DigestLookup && !digests.insert(entry.prompt_digest.clone()) {
                return Err(CassetteError::DuplicateDigest {
                    path: path.to_path_buf(),
                    index,
                    digest: entry.prompt_digest,
                });
            }
            entries.push(entry);
        }
        Ok(Self { entries, mode })
    }
}

pub fn load_cassette(path: &Path, mode: CassetteMode) -> Result<Cassette, CassetteError> {
    let text = std::fs::read_to_string(path).map_err(|source| CassetteError::Io { path: path.to_path_buf(), source })?;
    Cassette::parse(&text, mode, path)
}

/// Appends exchanges to a cassette file, flushing after every record.
#[derive(Debug)]
pub struct CassetteWriter {
    path: PathBuf,
    out: BufWriter<File>,
    next_seq: usize,
}

impl CassetteWriter {
    /// Creates (or truncates) the cassette at `path`.
    pub fn create(path: &Path) -> Result<Self, CassetteError> {
        let io = |source| CassetteError::Io { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path).map_err(io)?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file), next_seq: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, request: &ChatRequest, response: &ChatResponse) -> Result<(), CassetteError> {
        let entry = CassetteEntry {
            seq: self.next_seq,
            stage: request.stage,
            prompt_digest: request.digest(),
            prompt_text: request.prompt_text.clone(),
            response_text: response.text.clone(),
            finish_state: response.finish_state,
        };
        let line = serde_json::to_string(&entry).expect("cassette entries serialize");
        let io = |source| CassetteError::Io { path: self.path.clone(), source };
        writeln!(self.out, "{line}").map_err(io)?;
        self.out.flush().map_err(io)?;
        self.next_seq += 1;
        Ok(())
    }
}

#[derive(Debug)]
struct ReplayState {
    cassette: Cassette,
    cursor: usize,
    consumed: Vec<bool>,
}

/// Serves recorded responses. Single-consumer in strict-sequence mode.
#[derive(Debug)]
pub struct ReplayBackend {
    state: Mutex<ReplayState>,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> Self {
        let consumed = vec![false; cassette.len()];
        Self { state: Mutex::new(ReplayState { cassette, cursor: 0, consumed }) }
    }

    pub fn open(path: &Path, mode: CassetteMode) -> Result<Self, CassetteError> {
        load_cassette(path, mode).map(Self::new)
    }

    /// Entries not yet served.
    pub fn remaining(&self) -> usize {
        let st = self.state.lock().unwrap();
        st.consumed.iter().filter(|c| !**c).count()
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut st = self.state.lock().unwrap();
        let digest = request.digest();
        match st.cassette.mode {
            CassetteMode::StrictSequence => {
                let pos = st.cursor;
                let Some(entry) = st.cassette.entries.get(pos) else {
                    return Err(GatewayError::CassetteExhausted { consumed: pos });
                };
                if entry.prompt_digest != digest {
                    return Err(GatewayError::DigestMismatch {
                        seq: entry.seq,
                        recorded_stage: entry.stage.to_string(),
                        stage: request.stage,
                        expected: entry.prompt_digest.clone(),
                        actual: digest,
                    });
                }
                let response = entry.response();
                st.cursor += 1;
                st.consumed[pos] = true;
                Ok(response)
            }
            CassetteMode::DigestLookup => {
                let found = st
                    .cassette
                    .entries
                    .iter()
                    .enumerate()
                    .find(|(i, e)| !st.consumed[*i] && e.prompt_digest == digest)
                    .map(|(i, e)| (i, e.response()));
                match found {
                    Some((i, response)) => {
                        st.consumed[i] = true;
                        Ok(response)
                    }
                    None => Err(GatewayError::NotInCassette { stage: request.stage, digest }),
                }
            }
        }
    }
}

/// Forwards to an inner backend and appends every exchange to a cassette.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    writer: Mutex<CassetteWriter>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, writer: CassetteWriter) -> Self {
        Self { inner, writer: Mutex::new(writer) }
    }
}

impl ChatBackend for RecordingBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = self.inner.send(request)?;
        self.writer.lock().unwrap().append(request, &response)?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, ScriptedBackend};
    use proptest::prelude::*;

    fn req(stage: StageTag, prompt: &str) -> ChatRequest {
        Gateway::new(Arc::new(ScriptedBackend::constant("")), "m").request(stage, prompt.into(), vec![])
    }

    fn entry(seq: usize, stage: StageTag, prompt: &str, reply: &str) -> CassetteEntry {
        CassetteEntry {
            seq,
            stage,
            prompt_digest: prompt_digest(stage, prompt),
            prompt_text: prompt.into(),
            response_text: reply.into(),
            finish_state: FinishState::Complete,
        }
    }

    fn to_jsonl(entries: &[CassetteEntry]) -> String {
        entries.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect()
    }

    #[test]
    fn replay_serves_recorded_text_by_digest() {
        let cassette = Cassette {
            entries: vec![entry(0, StageTag::GenCode, "d1", "```c\nint f(void);\n```")],
            mode: CassetteMode::DigestLookup,
        };
        let backend = ReplayBackend::new(cassette);
        let r = backend.send(&req(StageTag::GenCode, "d1")).unwrap();
        assert_eq!(r.text, "```c\nint f(void);\n```");
        assert!(matches!(backend.send(&req(StageTag::GenCode, "d1")), Err(GatewayError::NotInCassette { .. })));
    }

    #[test]
    fn strict_sequence_exhausts_and_checks_order() {
        let cassette = Cassette { entries: vec![entry(0, StageTag::GenCode, "a", "x")], mode: CassetteMode::StrictSequence };
        let backend = ReplayBackend::new(cassette.clone());
        backend.send(&req(StageTag::GenCode, "a")).unwrap();
        assert!(matches!(backend.send(&req(StageTag::GenCode, "a")), Err(GatewayError::CassetteExhausted { consumed: 1 })));

        let backend = ReplayBackend::new(cassette);
        assert!(matches!(backend.send(&req(StageTag::GenTests, "a")), Err(GatewayError::DigestMismatch { seq: 0, .. })));
        assert_eq!(backend.remaining(), 1);
    }

    #[test]
    fn load_preserves_order_and_accepts_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_cassette(&p, CassetteMode::StrictSequence).unwrap().is_empty());

        let es = [
            entry(0, StageTag::GenCode, "one", "1"),
            entry(1, StageTag::GenTests, "two", "2"),
            entry(2, StageTag::PredictCwe, "three", "3"),
        ];
        std::fs::write(&p, to_jsonl(&es)).unwrap();
        let c = load_cassette(&p, CassetteMode::StrictSequence).unwrap();
        assert_eq!(c.entries, es);
    }

    #[test]
    fn corrupted_second_record_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let mut text = to_jsonl(&[entry(0, StageTag::GenCode, "one", "1"), entry(1, StageTag::GenCode, "two", "2")]);
        text = text.replacen("\"seq\":1", "\"seq\":1,,", 1);
        std::fs::write(&p, text).unwrap();
        match load_cassette(&p, CassetteMode::StrictSequence) {
            Err(CassetteError::Malformed { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected malformed record, got {other:?}"),
        }
        assert!(matches!(
            load_cassette(&dir.path().join("missing.jsonl"), CassetteMode::StrictSequence),
            Err(CassetteError::Io { .. })
        ));
    }

    #[test]
    fn tampered_prompt_fails_digest_check() {
        let mut e = entry(0, StageTag::GenCode, "one", "1");
        e.prompt_text = "edited".into();
        let err = Cassette::parse(&to_jsonl(&[e]), CassetteMode::StrictSequence, Path::new("x")).unwrap_err();
        assert!(matches!(err, CassetteError::Malformed { index: 1, .. }));
    }

    #[test]
    fn duplicate_digest_only_rejected_in_lookup_mode() {
        let text = to_jsonl(&[entry(0, StageTag::GenTests, "same", "1"), entry(1, StageTag::GenTests, "same", "2")]);
        assert!(Cassette::parse(&text, CassetteMode::StrictSequence, Path::new("x")).is_ok());
        assert!(matches!(
            Cassette::parse(&text, CassetteMode::DigestLookup, Path::new("x")),
            Err(CassetteError::DuplicateDigest { index: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn record_then_replay_round_trips(
            script in prop::collection::vec((0usize..9, "[a-z ]{1,12}", "[ -~\n]{0,40}", 0u8..3), 1..12)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.jsonl");
            let responses: Vec<ChatResponse> = script.iter().map(|(_, _, text, fs)| ChatResponse {
                text: text.clone(),
                finish_state: [FinishState::Complete, FinishState::Truncated, FinishState::Refused][*fs as usize],
                usage: Usage::default(),
            }).collect();
            let queue = Mutex::new(responses.clone().into_iter());
            let inner = Arc::new(ScriptedBackend::new(move |_| queue.lock().unwrap().next().unwrap()));
            let recorder = RecordingBackend::new(inner, CassetteWriter::create(&path).unwrap());
            let requests: Vec<ChatRequest> =
                script.iter().map(|(s, p, _, _)| req(StageTag::ALL[*s], p)).collect();
            let recorded: Vec<ChatResponse> = requests.iter().map(|r| recorder.send(r).unwrap()).collect();
            drop(recorder);

            let replay = ReplayBackend::open(&path, CassetteMode::StrictSequence).unwrap();
            for (r, expected) in requests.iter().zip(&recorded) {
                prop_assert_eq!(&replay.send(r).unwrap(), expected);
            }
            prop_assert_eq!(replay.remaining(), 0);
            prop_assert_eq!(recorded, responses);
        }
    }
}
