use std::path::Path;
use std::process::{Command, Output};

use mctsep_cli::{commands, RunConfig};

/// Small suites so each invocation finishes quickly.
const SMALL: [(&str, &str); 4] = [
    ("MCTSEP_SUITE__TRAIN__COUNT", "4"),
    ("MCTSEP_SUITE__HELD_OUT__COUNT", "8"),
    ("MCTSEP_SUITE__EXPERT__COUNT", "6"),
    ("MCTSEP_LOOP__ITERATIONS", "2"),
];

fn mctsep(out: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mctsep"));
    cmd.args(args).arg("--out").arg(out).env("MCTSEP_LOG", "warn");
    for (k, v) in SMALL.iter().chain(env) {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let o = mctsep(out, args, env);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn small_config(out: &Path) -> RunConfig {
    let vars = SMALL.iter().map(|(k, v)| (k.to_string(), v.to_string()));
    let mut cfg = RunConfig::load(None, vars).unwrap();
    cfg.run.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn invalid_value_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = mctsep(dir.path(), &["dump-config"], &[("MCTSEP_SEARCH__GAMMA", "1.5")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("search.gamma"));

    let file = dir.path().join("bad.toml");
    std::fs::write(&file, "[train]\nbeta = -1.0\n").unwrap();
    let o = mctsep(dir.path(), &["--config", file.to_str().unwrap(), "dump-config"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.beta"));

    let o = mctsep(dir.path(), &["no-such-command"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dump_config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(dir.path(), &["dump-config"], &[("MCTSEP_SEARCH__BUDGET", "77")]).stdout;
    let file = dir.path().join("run.toml");
    std::fs::write(&file, &first).unwrap();
    let vars = [("MCTSEP_SEARCH__BUDGET", "77")];
    let again = ok(dir.path(), &["--config", file.to_str().unwrap(), "dump-config"], &vars).stdout;
    assert_eq!(first, again);
    assert!(String::from_utf8(first).unwrap().contains("budget = 77"));
}

#[test]
fn search_dumps_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let sa = ok(&a, &["search", "--task-seed", "5"], &[]).stdout;
    let sb = ok(&b, &["search", "--task-seed", "5", "--workers", "2"], &[]).stdout;
    let mut summary: serde_json::Value = serde_json::from_slice(&sa).unwrap();
    let mut other: serde_json::Value = serde_json::from_slice(&sb).unwrap();
    let tree = summary["tree"].take();
    other["tree"].take();
    assert_eq!(summary, other);
    let tree = tree.as_str().unwrap();
    let rel = Path::new(tree).strip_prefix(&a).unwrap();
    assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap());
}

#[test]
fn collect_manifest_matches_its_buffer() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["warmup"], &[]);
    let ck = dir.path().join("checkpoints/warmup.json");
    ok(dir.path(), &["collect", "--checkpoint", ck.to_str().unwrap()], &[]);
    for name in ["success.jsonl", "preferences.jsonl"] {
        let data = dir.path().join("data").join(name);
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(mctsep::datasets::manifest_path(&data)).unwrap()).unwrap();
        let lines = std::fs::read_to_string(&data).unwrap().lines().count();
        // One header line precedes the records.
        assert_eq!(manifest["count"].as_u64().unwrap() as usize + 1, lines, "{name}");
    }
}

#[test]
fn interrupted_loop_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&a, &["loop"], &[]);
    ok(&b, &["loop", "--stop-after", "1"], &[]);
    assert!(!b.join("checkpoints/final.json").exists());
    ok(&b, &["loop"], &[]);
    for f in [
        "checkpoints/final.json",
        "reports/loop.jsonl",
        "loop/iter-001/report.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn artifacts_from_another_config_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&a, &["warmup"], &[]);
    let ck = a.join("checkpoints/warmup.json");
    let o = mctsep(
        &b,
        &["eval", "--checkpoint", ck.to_str().unwrap()],
        &[("MCTSEP_RUN__SEED", "9")],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));

    let o = mctsep(
        &b,
        &["train-sft", "--data", b.join("missing.jsonl").to_str().unwrap()],
        &[],
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn warmup_on_an_empty_expert_file_keeps_the_initial_policy() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["warmup"], &[]);
    let init = dir.path().join("checkpoints/warmup.json");
    let before = std::fs::read_to_string(&init).unwrap();
    let kept = dir.path().join("init.json");
    std::fs::write(&kept, &before).unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, mctsep::datasets::to_jsonl::<mctsep::datasets::Trajectory>(&[])).unwrap();
    ok(
        dir.path(),
        &[
            "warmup",
            "--experts",
            empty.to_str().unwrap(),
            "--init",
            kept.to_str().unwrap(),
        ],
        &[],
    );
    let after: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&init).unwrap()).unwrap();
    let before: serde_json::Value = serde_json::from_str(&before).unwrap();
    assert_eq!(after["params"], before["params"]);
}

#[test]
fn eval_report_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["warmup"], &[]);
    let ck = dir.path().join("checkpoints/warmup.json");
    let stdout = ok(dir.path(), &["eval", "--checkpoint", ck.to_str().unwrap()], &[]).stdout;
    let summary: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    let cfg = small_config(dir.path());
    let file = commands::read_report(&dir.path().join("reports/eval-greedy.json"), &cfg).unwrap();
    assert_eq!(file.report.overall.episodes, 8);
    assert_eq!(file.report.episodes.len(), 8);
    assert_eq!(
        summary["success_rate"].as_f64().unwrap(),
        file.report.overall.success_rate
    );
    assert_eq!(file.checkpoint.as_deref(), Some(cfg.hash().as_str()));
}
