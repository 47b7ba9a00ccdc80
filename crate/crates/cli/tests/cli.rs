use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn memfree(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memfree"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn memfree")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json_lines(o: &Output) -> Vec<serde_json::Value> {
    stdout(o)
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn canary_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = memfree(
        dir.path(),
        &["canary", "--out", ".", "--duplicates", "12,40", "--background-docs", "40", "--canaries-per-count", "2"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = memfree(dir.path(), &["build", "corpus.jsonl", "--out", "out"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

fn first_canary_words(dir: &Path, n: usize) -> String {
    let line = fs::read_to_string(dir.join("canaries.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    rec["text"]
        .as_str()
        .unwrap()
        .split_whitespace()
        .take(n)
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn build_reports_sizes_and_is_deterministic() {
    let dir = canary_workspace();
    let first = fs::read(dir.path().join("out/filter.mfbf")).unwrap();
    let o = memfree(dir.path(), &["build", "corpus.jsonl", "--out", "again"]);
    assert!(o.status.success());
    let summary = &json_lines(&o)[0];
    assert!(summary["inserted"].as_u64().unwrap() > 0);
    assert_eq!(summary["k"], 7);
    assert_eq!(first, fs::read(dir.path().join("again/filter.mfbf")).unwrap());
}

#[test]
fn build_with_unreachable_threshold_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.txt"), "one two three four five six seven eight nine ten").unwrap();
    let o = memfree(dir.path(), &["build", "tiny.txt", "--min-count", "2", "--out", "out"]);
    assert!(o.status.success());
    assert_eq!(json_lines(&o)[0]["inserted"], 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
}

#[test]
fn check_exit_codes() {
    let dir = canary_workspace();
    let passage = first_canary_words(dir.path(), 14);
    let o = memfree(dir.path(), &["check", "--filter", "out/filter.mfbf", &passage]);
    assert_eq!(o.status.code(), Some(1));
    let verdicts = json_lines(&o);
    assert_eq!(verdicts.len(), 5);
    assert!(verdicts.iter().all(|v| v["hit"] == true));

    let o = memfree(dir.path(), &["check", "--filter", "out/filter.mfbf", "too short"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());

    let o = memfree(dir.path(), &["check", "--filter", "missing.mfbf", "x"]);
    assert_eq!(o.status.code(), Some(3));

    fs::write(dir.path().join("bad.mfbf"), b"NOPE and more bytes than a header needs, surely").unwrap();
    let o = memfree(dir.path(), &["check", "--filter", "bad.mfbf", "--vocab", "out/vocab.txt", "x"]);
    assert_eq!(o.status.code(), Some(4));

    let o = memfree(dir.path(), &["check", "--filter", "out/filter.mfbf", "--fp", "2", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = memfree(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_eval_stats_round_trip() {
    let dir = canary_workspace();
    let o = memfree(
        dir.path(),
        &["generate", "--filter", "out/filter.mfbf", "corpus.jsonl", "--prompts", "canaries.jsonl", "--out", "out"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json_lines(&o)[0]["generations"], 8);

    let o = memfree(
        dir.path(),
        &["eval", "--traces", "out/traces.jsonl", "--examples", "out/examples.jsonl", "--filter", "out/filter.mfbf"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = json_lines(&o);
    let summary = lines.last().unwrap();
    assert_eq!(summary["record"], "summary");
    assert_eq!(summary["undefended_verbatim_fraction"], 1.0);
    assert_eq!(summary["defended_verbatim_fraction"], 0.0);
    assert_eq!(lines.iter().filter(|l| l["record"] == "pair").count(), 4);

    let o = memfree(dir.path(), &["stats", "--traces", "out/traces.jsonl"]);
    assert!(o.status.success());
    let stats = &json_lines(&o)[0];
    assert_eq!(stats["generations"], 4);
    assert!(stats["hits_by_position"]["1"].as_u64().unwrap() > 0);
}

#[test]
fn empty_filter_generation_matches_undefended() {
    let dir = canary_workspace();
    let o = memfree(dir.path(), &["build", "corpus.jsonl", "--min-count", "100000", "--out", "empty"]);
    assert!(o.status.success());
    let o = memfree(
        dir.path(),
        &[
            "generate", "--filter", "empty/filter.mfbf", "corpus.jsonl", "--prompts", "canaries.jsonl",
            "--sampler", "top-k:5", "--seed", "3", "--out", "empty",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traces: Vec<serde_json::Value> = fs::read_to_string(dir.path().join("empty/traces.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for pair in traces.chunks(2) {
        assert_eq!(pair[0]["mode"], "undefended");
        assert_eq!(pair[1]["mode"], "defended");
        assert_eq!(pair[0]["output"], pair[1]["output"]);
    }
}

#[test]
fn eval_of_empty_traces_is_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("traces.jsonl"), "").unwrap();
    fs::write(dir.path().join("examples.jsonl"), "").unwrap();
    let o = memfree(dir.path(), &["eval", "--traces", "traces.jsonl", "--examples", "examples.jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let lines = json_lines(&o);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["pairs"], 0);
}

#[test]
fn overlap_of_indexed_and_short_targets() {
    let dir = canary_workspace();
    fs::write(dir.path().join("short.txt"), "just a few words").unwrap();
    let o = memfree(dir.path(), &["overlap", "--filter", "out/filter.mfbf", "canaries.jsonl", "short.txt"]);
    assert!(o.status.success());
    let rows = json_lines(&o);
    assert_eq!(rows[0]["hit_pct"], 100.0);
    assert_eq!(rows[1]["target_set"], "short");
    assert_eq!(rows[1]["eligible_pct"], 0.0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "a b c a b c a b c").unwrap();
    fs::write(dir.path().join("exp.conf"), "n = 3\nmin_count = 3\n").unwrap();
    let o = memfree(dir.path(), &["build", "c.txt", "--config", "exp.conf", "--out", "o1"]);
    assert_eq!(json_lines(&o)[0]["inserted"], 1);
    let o = memfree(dir.path(), &["build", "c.txt", "--config", "exp.conf", "--min-count", "2", "--out", "o2"]);
    assert_eq!(json_lines(&o)[0]["inserted"], 3);
}
