mod support;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};

use sgen_core::persist::{load_run, load_transcript, sample_dir, TRANSCRIPT_FILE};
use sgen_core::workflow::Preset;

use support::{bench_dir, golden_dir, repo_root, sgen, solutions};

fn stderr_of(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_task_id_is_a_usage_error() {
    let out = sgen()
        .args(["run-task", "no_such_task", "--backend", "replay", "--cassette", "/nonexistent"])
        .arg("--benchmark")
        .arg(bench_dir())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("no_such_task"));
}

#[test]
fn live_backend_without_credential_is_a_usage_error() {
    let run = tempfile::tempdir().unwrap();
    let out = sgen()
        .args(["run-task", "cwe_125_get_item", "--n", "1", "--k", "1"])
        .arg("--benchmark")
        .arg(bench_dir())
        .arg("--run-dir")
        .arg(run.path().join("r"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("SCG_API_KEY"));
    assert!(!run.path().join("r").exists());
}

#[test]
fn replayed_run_task_matches_golden_transcript() {
    let run = tempfile::tempdir().unwrap();
    let dir = run.path().join("r");
    let golden = golden_dir(Preset::A4);
    let out = sgen()
        .arg("--config")
        .arg(golden.join("config.toml"))
        .args(["run-task", "cwe_079_welcome_message", "--run-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    let got = load_transcript(&sample_dir(&dir, "cwe_079_welcome_message", 0).join(TRANSCRIPT_FILE)).unwrap();
    let want =
        load_transcript(&sample_dir(&golden.join("expected"), "cwe_079_welcome_message", 0).join(TRANSCRIPT_FILE)).unwrap();
    assert_eq!(got, want);

    // A second run into the same directory is refused.
    let again = sgen()
        .arg("--config")
        .arg(golden.join("config.toml"))
        .args(["run-task", "cwe_079_welcome_message", "--run-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn replay_verify_detects_a_tampered_report() {
    let run = tempfile::tempdir().unwrap();
    let dir = run.path().join("r");
    let out = sgen()
        .arg("--config")
        .arg(golden_dir(Preset::A0).join("config.toml"))
        .arg("bench")
        .arg("--run-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    let ok = sgen().arg("replay-verify").arg(&dir).output().unwrap();
    assert!(ok.status.success(), "{}", stderr_of(&ok));

    let report = dir.join("report.json");
    let text = std::fs::read_to_string(&report).unwrap();
    std::fs::write(&report, text.replacen("\"func_sec\": 0.2", "\"func_sec\": 0.4", 1)).unwrap();
    let bad = sgen().arg("replay-verify").arg(&dir).output().unwrap();
    assert_eq!(bad.status.code(), Some(2), "{}", stderr_of(&bad));
}

#[test]
fn guidelines_lint_accepts_shipped_file_and_rejects_duplicates() {
    let shipped = repo_root().join("crates/core/data/guidelines.json");
    let out = sgen().arg("guidelines-lint").arg(&shipped).output().unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("guidelines"));

    let dir = tempfile::tempdir().unwrap();
    let dup = dir.path().join("dup.json");
    std::fs::write(
        &dup,
        r#"[{"id": "a", "cwes": [20], "text": "one"}, {"id": "a", "cwes": [22], "text": "two"}]"#,
    )
    .unwrap();
    let out = sgen().arg("guidelines-lint").arg(&dup).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("\"a\"") || stderr_of(&out).contains(" a"), "{}", stderr_of(&out));
}

/// Chat-completions stand-in for the record test. It answers from the
/// prompt text alone and keeps the headers it saw.
fn chat_stub(secure: String, tests: String) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let headers = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&headers);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                seen.lock().unwrap().push(line.trim_end().to_string());
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let body: serde_json::Value = serde_json::from_slice(&buf).unwrap();
            let prompt = body["messages"].as_array().unwrap().last().unwrap()["content"].as_str().unwrap().to_string();
            let content = if prompt.contains("unit tests in Python") {
                format!("```python\n{tests}\n```")
            } else if prompt.contains("Which CWEs") {
                "- CWE-125: Out-of-bounds Read".to_string()
            } else if prompt.contains("firm yes or no") {
                "No".to_string()
            } else {
                format!("```c\n{secure}\n```")
            };
            let reply = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
                "usage": {"prompt_tokens": 1, "completion_tokens": 1}
            })
            .to_string();
            let head = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.len()
            );
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, headers)
}

fn write_config(dir: &Path, base_url: &str) -> std::path::PathBuf {
    let path = dir.join("record.toml");
    let text = format!(
        "model = \"stub-model\"\nbackend = \"record\"\ncassette = \"cassettes\"\nbenchmark = {:?}\npreset = \"A4\"\nn = 2\nks = [1, 2]\n\n[live]\nbase_url = {base_url:?}\n",
        bench_dir().display().to_string()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn recorded_run_replays_to_identical_transcripts() {
    let s = solutions().into_iter().find(|s| s.task.id == "cwe_125_get_item").unwrap();
    let tests = s.task.reference_func_tests.clone().unwrap().script;
    let (url, headers) = chat_stub(s.secure.clone(), tests);
    let work = tempfile::tempdir().unwrap();
    let config = write_config(work.path(), &url);

    let recorded = work.path().join("recorded");
    let out = sgen()
        .env("SCG_API_KEY", "test-key")
        .arg("--config")
        .arg(&config)
        .args(["run-task", "cwe_125_get_item", "--run-dir"])
        .arg(&recorded)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(headers.lock().unwrap().iter().any(|h| h == "authorization: Bearer test-key"));
    assert!(work.path().join("cassettes/cwe_125_get_item/1.jsonl").is_file());
    let config_echo = std::fs::read_to_string(recorded.join("config.toml")).unwrap();
    assert!(!config_echo.contains("test-key"));

    let replayed = work.path().join("replayed");
    let out = sgen()
        .arg("--config")
        .arg(&config)
        .args(["run-task", "cwe_125_get_item", "--backend", "replay", "--run-dir"])
        .arg(&replayed)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert_eq!(load_run(&recorded).unwrap(), load_run(&replayed).unwrap());

    let verify = sgen().args(["replay-verify", "--rerun"]).arg(&recorded).output().unwrap();
    assert!(verify.status.success(), "{}", stderr_of(&verify));
}
