use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn anaphora(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anaphora"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ANAPHORA_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = anaphora(&["generate", "--out", "a"], tmp.path());
    let b = anaphora(&["generate", "--out", "b"], tmp.path());
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success());
    for f in ["dataset.jsonl", "source_vocab.json", "target_vocab.json"] {
        let x = fs::read(tmp.path().join("a").join(f)).unwrap();
        assert_eq!(x, fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
    let text = fs::read_to_string(tmp.path().join("a/dataset.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 5122);
}

#[test]
fn generate_reports_unwritable_path() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("blocker"), "").unwrap();
    let o = anaphora(&["generate", "--out", "blocker/sub"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("blocker"), "{}", stderr(&o));
}

#[test]
fn out_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_anaphora"))
        .args(["generate"])
        .current_dir(tmp.path())
        .env("ANAPHORA_OUT", "envout")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("envout/dataset.jsonl").exists());
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = anaphora(&["experiment", "--experiment", "E9"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("E9"));
}

#[test]
fn gradcheck_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = anaphora(&["gradcheck"], tmp.path());
    assert!(ok.status.success());
    let report = String::from_utf8(ok.stdout).unwrap();
    for label in ["SRN(-)", "SRN(+)", "GRU(-)", "GRU(+)", "LSTM(-)", "LSTM(+)"] {
        assert!(report.contains(&format!("{label:8} PASS")), "{report}");
    }
    let bad = anaphora(&["gradcheck", "--inject-fault", "gru-reset-sign-flip"], tmp.path());
    assert!(!bad.status.success());
    assert!(String::from_utf8(bad.stdout).unwrap().contains("GRU(-)   FAIL"));
}

#[test]
fn tiny_sweep_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment": "E3", "units": ["gru"], "attention": "on", "seeds": [0, 1],
                  "withheld": [2], "hidden": 6, "embed": 5, "max_epochs": 2, "out": "sweep"}"#;
    fs::write(tmp.path().join("cfg.json"), cfg).unwrap();
    let o = anaphora(&["experiment", "--config", "cfg.json", "--jobs", "2"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let run = tmp.path().join("sweep/runs/E3-k2-gru-attn-s0");
    for f in ["manifest.json", "checkpoint.bin", "history.csv", "split.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let non_paper: Vec<&str> = manifest["non_paper"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(non_paper.contains(&"hidden_size=6") && non_paper.contains(&"max_epochs=2"), "{non_paper:?}");
    for f in ["summary.json", "tables/E3.csv", "tables/table1.csv", "tables/figure1.csv", "curves/E3-k2-gru-attn-s1.csv"] {
        assert!(tmp.path().join("sweep").join(f).exists(), "{f}");
    }
    let table1 = fs::read_to_string(tmp.path().join("sweep/tables/table1.csv")).unwrap();
    assert_eq!(table1.lines().count(), 7);

    // Existing runs are protected unless forced.
    let again = anaphora(&["experiment", "--config", "cfg.json"], tmp.path());
    assert!(!again.status.success());
    assert!(stderr(&again).contains("--force"));
    let history = fs::read(run.join("history.csv")).unwrap();
    let forced = anaphora(&["experiment", "--config", "cfg.json", "--force"], tmp.path());
    assert!(forced.status.success());
    assert_eq!(fs::read(run.join("history.csv")).unwrap(), history);

    let ev = anaphora(&["eval", run.to_str().unwrap()], tmp.path());
    assert!(ev.status.success(), "{}", stderr(&ev));
    let out = String::from_utf8(ev.stdout).unwrap();
    assert!(out.contains("refl-alice") && out.contains("test"), "{out}");

    let rep = anaphora(&["train", "--manifest", run.join("manifest.json").to_str().unwrap(), "--out", "re"], tmp.path());
    assert!(rep.status.success(), "{}", stderr(&rep));
    let re = tmp.path().join("re/reproduced/E3-k2-gru-attn-s0");
    assert_eq!(fs::read(re.join("history.csv")).unwrap(), history);
    assert_eq!(fs::read(re.join("checkpoint.bin")).unwrap(), fs::read(run.join("checkpoint.bin")).unwrap());

    fs::remove_dir_all(tmp.path().join("sweep/tables")).unwrap();
    let r = anaphora(&["report", "--out", "sweep"], tmp.path());
    assert!(r.status.success());
    assert!(tmp.path().join("sweep/tables/table1.csv").exists());
}

#[test]
fn train_and_split_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let s = anaphora(&["split", "--experiment", "E4a", "--seed", "2", "--out", "o"], tmp.path());
    assert!(s.status.success(), "{}", stderr(&s));
    let split: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("o/split-E4a-s2.json")).unwrap()).unwrap();
    assert_eq!(split["generalization"].as_array().unwrap().len(), 189);

    let args = ["train", "--experiment", "E1", "--units", "srn", "--attention", "off", "--hidden", "4", "--embed", "3", "--max-epochs", "1", "--out", "o"];
    let t = anaphora(&args, tmp.path());
    assert!(t.status.success(), "{}", stderr(&t));
    assert!(tmp.path().join("o/runs/E1-srn-noattn-s0/checkpoint.bin").exists());
    let both = anaphora(&["train", "--experiment", "E1", "--units", "srn", "--out", "o"], tmp.path());
    assert!(!both.status.success());
}
