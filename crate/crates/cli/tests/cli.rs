use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[experiment]
domains = ["micro", "rest_slot", "weather"]
seeds = [0]
budget = 100
checkpoint_interval = 50
eval_dialogs = 20
success_cut = 50
noise_p = 0.1
rule_episodes = 50
corpus_train = 20
corpus_test = 10

[dst]
word_emb_width = 8
utt_hidden_width = 8
dialog_hidden_width = 8
shared_dense_width = 8
epochs = 2

[policy]
embed_width = 8
value_hidden_width = 8

[trpo]
dialogs_per_iteration = 25
"#;

fn actembed(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actembed"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn with_config(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let mut all = vec!["--config", cfg.to_str().unwrap()];
    all.extend_from_slice(args);
    actembed(dir, &all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn training_without_a_tracker_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = with_config(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-dst"));
}

#[test]
fn bad_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[experiment]\nseeds = []\n").unwrap();
    let o = actembed(dir.path(), &["--config", cfg.to_str().unwrap(), "report"]);
    assert_eq!(o.status.code(), Some(2));
    let o = actembed(dir.path(), &["--scale", "huge", "report"]);
    assert_eq!(o.status.code(), Some(2));
    let o = actembed(dir.path(), &["--config", "/nonexistent.toml", "report"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_without_logs_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = with_config(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn full_pipeline_is_resumable_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for step in [&["gen-corpus"][..], &["train-dst"], &["eval-dst"]] {
        let o = with_config(d, step);
        assert!(o.status.success(), "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(stdout(&with_config(d, &["eval-dst"])).contains("joint accuracy"));

    let o = with_config(d, &["train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.contains("Average"));
    assert!(table.contains("rule-based") && table.contains("mtl") && table.contains("tl"));
    let out = d.join("out");
    // 3 single + 1 mtl + 3 transfer cells for one seed.
    assert_eq!(fs::read_dir(out.join("runs")).unwrap().count(), 7);
    let log = fs::read_to_string(out.join("runs/single-weather-s0.csv")).unwrap();
    assert!(log.starts_with(
        "run_id,mode,domain,seed,dialogs_seen,success_rate,avg_length,mean_kl,surrogate_gain,accepted"
    ));

    let before = fs::read(out.join("runs/mtl-all-s0.csv")).unwrap();
    let report_before = fs::read(out.join("report.csv")).unwrap();
    let o = with_config(d, &["train"]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("runs/mtl-all-s0.csv")).unwrap(), before);
    let o = with_config(d, &["report"]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("report.csv")).unwrap(), report_before);

    // A second directory with the same configuration reproduces the logs.
    let other = tempfile::tempdir().unwrap();
    for step in [&["gen-corpus"][..], &["train-dst"], &["train", "--mode", "mtl"]] {
        assert!(with_config(other.path(), step).status.success());
    }
    assert_eq!(fs::read(other.path().join("out/runs/mtl-all-s0.csv")).unwrap(), before);

    let o = with_config(d, &["evaluate", "--run-id", "mtl-all-s0", "--episodes", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
    let o = with_config(d, &["evaluate", "--run-id", "nope"]);
    assert_eq!(o.status.code(), Some(3));
    let o = with_config(d, &["evaluate", "--episodes", "20"]);
    assert!(stdout(&o).contains("rule-based"));

    let o = with_config(
        d,
        &["grid-search", "--domain", "micro", "--max-kl", "0.01,0.05", "--dialogs-per-iteration", "50"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("best: max_kl"));
    assert!(out.join("grid/micro/summary.csv").exists());
}
