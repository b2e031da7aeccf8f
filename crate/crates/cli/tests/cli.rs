//! CLI surface tests: exit-code discipline, machine-readable output, and
//! the offline replay workflows.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn chatvis() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chatvis"))
}

fn stub_interpreter() -> &'static str {
    env!("CARGO_BIN_EXE_stub_interpreter")
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn make_pattern(pattern: &str, w: u32, h: u32, path: &Path) {
    let status = Command::new(stub_interpreter())
        .args(["--pattern", pattern, &w.to_string(), &h.to_string()])
        .arg(path)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn gen_without_prompt_is_a_usage_error() {
    let output = chatvis().args(["gen", "--out", "/tmp/x"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = chatvis().args(["score", "--definitely-not-a-flag"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn gen_rag_without_index_is_a_usage_error() {
    let output = chatvis()
        .args(["gen", "--prompt", "x", "--out", "/tmp/x", "--mode", "rag"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn score_identical_images_prints_inf_and_one() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    make_pattern("gradient", 16, 16, &a);
    let output = chatvis().arg("score").arg(&a).arg(&a).output().unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("psnr=inf"), "{stdout}");
    assert!(stdout.contains("ssim=1.000000"), "{stdout}");
    assert!(!stdout.contains("lpips="), "no plugin, no lpips line: {stdout}");
}

#[test]
fn score_with_stub_lpips_plugin() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    make_pattern("checker", 16, 16, &a);
    let template = format!("{} {{A}} {{B}}", env!("CARGO_BIN_EXE_stub_lpips"));
    let output = chatvis()
        .arg("score")
        .arg(&a)
        .arg(&a)
        .args(["--lpips-plugin", &template])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(stdout_of(&output).contains("lpips=0.26"));
}

#[test]
fn score_shape_mismatch_fails_unless_resized() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    make_pattern("gradient", 16, 16, &a);
    make_pattern("gradient", 32, 32, &b);

    let strict = chatvis().arg("score").arg(&a).arg(&b).output().unwrap();
    assert_eq!(strict.status.code(), Some(1));

    let resized = chatvis().arg("score").arg(&a).arg(&b).arg("--resize").output().unwrap();
    assert_eq!(resized.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&resized.stderr));
}

#[test]
fn extract_errors_prints_parsed_records_as_json() {
    let log = fixtures().join("logs/name_error.log");
    let output = chatvis().arg("extract-errors").arg(&log).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    let records: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    let records = records.as_array().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["error_class"], "NameError");
    assert_eq!(records[0]["error_message"], "name 'Contur' is not defined");
}

#[test]
fn extract_errors_missing_file_is_operational_failure() {
    let output = chatvis().args(["extract-errors", "/no/such.log"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn gen_fewshot_replay_runs_without_any_index() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("transcript.jsonl");
    std::fs::write(
        &transcript,
        r#"{"digest":"","content":"```\nemit gradient 16 16 out.png\nprint done\n```","usage":{"prompt_tokens":0,"completion_tokens":0}}"#,
    )
    .unwrap();
    let out = dir.path().join("session");
    let output = chatvis()
        .args(["gen", "--prompt", "Make the gradient image", "--mode", "fewshot"])
        .args(["--backend", "replay"])
        .arg("--transcript")
        .arg(&transcript)
        .arg("--out")
        .arg(&out)
        .args(["--interpreter", stub_interpreter()])
        .args(["--expected-artifact", "out.png"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("status=Success"), "{stdout}");
    assert!(stdout.contains("attempts=1"), "{stdout}");
    assert!(out.join("out.png").is_file());
    assert!(out.join("session.json").is_file());
    assert!(out.join("attempt_1.py").is_file());
}

#[test]
fn gen_exhausted_session_exits_nonzero_but_saves_record() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("transcript.jsonl");
    let broken = r#"{"digest":"","content":"```\ntraceback ValueError bad config\nexit 1\n```","usage":{"prompt_tokens":0,"completion_tokens":0}}"#;
    std::fs::write(&transcript, format!("{broken}\n{broken}\n")).unwrap();
    let out = dir.path().join("session");
    let output = chatvis()
        .args(["gen", "--prompt", "x", "--mode", "fewshot", "--backend", "replay"])
        .arg("--transcript")
        .arg(&transcript)
        .arg("--out")
        .arg(&out)
        .args(["--interpreter", stub_interpreter()])
        .args(["--max-iterations", "2"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stdout_of(&output).contains("status=Exhausted"));
    assert!(out.join("attempt_2.py").is_file());
}

#[test]
fn ingest_then_rag_gen_replay() {
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("index.jsonl");
    let corpus = dir.path().join("corpus.jsonl");
    let ingest = chatvis()
        .arg("ingest")
        .arg("--docs")
        .arg(fixtures().join("docs"))
        .arg("--index")
        .arg(&index)
        .arg("--corpus")
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(ingest.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&ingest.stderr));
    let summary = stdout_of(&ingest);
    assert!(summary.contains("chunks=13"), "{summary}");
    assert!(summary.contains("embedder=fallback-v1"), "{summary}");

    let transcript = dir.path().join("transcript.jsonl");
    let entries = [
        r#"{"digest":"","content":"1. Contour the dataset\n2. SaveScreenshot out.png","usage":{"prompt_tokens":0,"completion_tokens":0}}"#,
        r#"{"digest":"","content":"```\nemit rings 16 16 out.png\n```","usage":{"prompt_tokens":0,"completion_tokens":0}}"#,
    ];
    std::fs::write(&transcript, entries.join("\n")).unwrap();
    let out = dir.path().join("session");
    let output = chatvis()
        .args(["gen", "--prompt", "Contour the dataset and save out.png"])
        .args(["--mode", "rag", "--backend", "replay"])
        .arg("--transcript")
        .arg(&transcript)
        .arg("--index")
        .arg(&index)
        .arg("--corpus")
        .arg(&corpus)
        .arg("--out")
        .arg(&out)
        .args(["--interpreter", stub_interpreter()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(out.join("out.png").is_file());
    let session: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("session.json")).unwrap()).unwrap();
    assert_eq!(session["mode"], "rag");
    assert!(session["plan"]["steps"].as_array().unwrap().len() == 2);
}

#[test]
fn bench_quick_variant_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let output = chatvis()
        .arg("bench")
        .arg("--suite")
        .arg(fixtures().join("suite"))
        .arg("--out")
        .arg(&out)
        .args(["--modes", "fewshot", "--variants", "quick", "--backend", "replay"])
        .arg("--transcripts")
        .arg(fixtures().join("transcripts"))
        .args(["--interpreter", stub_interpreter()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("pass_at_1=33.3"), "quick fewshot passes 1 of 3: {stdout}");
    assert!(out.join("report.md").is_file());
    assert!(out.join("report.csv").is_file());
    assert!(out.join("report.json").is_file());
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("chatvis.toml");
    std::fs::write(
        &config,
        format!("[exec]\ninterpreter = \"{}\"\n\n[session]\nmax_iterations = 2\n", stub_interpreter()),
    )
    .unwrap();
    let transcript = dir.path().join("transcript.jsonl");
    let broken = r#"{"digest":"","content":"```\ntraceback ValueError nope\nexit 1\n```","usage":{"prompt_tokens":0,"completion_tokens":0}}"#;
    std::fs::write(&transcript, format!("{broken}\n{broken}\n{broken}\n")).unwrap();

    // Config file: interpreter and max_iterations=2 come from the file.
    let out = dir.path().join("from-config");
    let output = chatvis()
        .arg("--config")
        .arg(&config)
        .args(["gen", "--prompt", "x", "--mode", "fewshot", "--backend", "replay"])
        .arg("--transcript")
        .arg(&transcript)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stdout_of(&output).contains("attempts=2"), "{}", stdout_of(&output));

    // Flag overrides the file.
    let out = dir.path().join("from-flag");
    let output = chatvis()
        .arg("--config")
        .arg(&config)
        .args(["gen", "--prompt", "x", "--mode", "fewshot", "--backend", "replay"])
        .arg("--transcript")
        .arg(&transcript)
        .arg("--out")
        .arg(&out)
        .args(["--max-iterations", "3"])
        .output()
        .unwrap();
    assert!(stdout_of(&output).contains("attempts=3"), "{}", stdout_of(&output));
}

#[test]
fn interpreter_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("transcript.jsonl");
    std::fs::write(
        &transcript,
        r#"{"digest":"","content":"```\nprint via env\n```","usage":{"prompt_tokens":0,"completion_tokens":0}}"#,
    )
    .unwrap();
    let out = dir.path().join("session");
    let output = chatvis()
        .env("CHATVIS_INTERPRETER", stub_interpreter())
        .args(["gen", "--prompt", "x", "--mode", "fewshot", "--backend", "replay"])
        .arg("--transcript")
        .arg(&transcript)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn parallel_jobs_produce_the_same_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path, jobs: &str| {
        let output = chatvis()
            .arg("bench")
            .arg("--suite")
            .arg(fixtures().join("suite"))
            .arg("--out")
            .arg(out)
            .args(["--modes", "fewshot", "--variants", "full,quick", "--backend", "replay"])
            .arg("--transcripts")
            .arg(fixtures().join("transcripts"))
            .args(["--interpreter", stub_interpreter()])
            .args(["--jobs", jobs])
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0));
        std::fs::read(out.join("report.csv")).unwrap()
    };
    let serial = run(&dir.path().join("serial"), "1");
    let parallel = run(&dir.path().join("parallel"), "3");
    assert_eq!(serial, parallel);
}

#[test]
fn bench_with_lpips_stub_fills_the_lpips_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let template = format!("{} {{A}} {{B}}", env!("CARGO_BIN_EXE_stub_lpips"));
    let output = chatvis()
        .arg("bench")
        .arg("--suite")
        .arg(fixtures().join("suite"))
        .arg("--out")
        .arg(&out)
        .args(["--modes", "fewshot", "--variants", "full", "--backend", "replay"])
        .arg("--transcripts")
        .arg(fixtures().join("transcripts"))
        .args(["--interpreter", stub_interpreter()])
        .args(["--lpips-plugin", &template])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.contains("0.2600"), "lpips column filled: {csv}");
}
