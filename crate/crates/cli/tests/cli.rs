use std::path::Path;
use std::process::{Command, Output};

fn dbiqa(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbiqa"))
        .args(args)
        .env("DBIQA_DATA_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Sources plus a synthesized corpus under `root` with default paths.
fn corpus(root: &Path, count: &str) {
    ok(&dbiqa(root, &["make-sources", "--count", count, "--side", "40", "--seed", "3"]));
    ok(&dbiqa(root, &["synth", "--seed", "5"]));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dbiqa(dir.path(), &["gradcheck", "--trials", "2"]);
    ok(&out);
    let checks = json(&dir.path().join("gradcheck/gradcheck.json"));
    assert!(checks.as_array().unwrap().len() >= 10);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&dbiqa(root, &["make-sources", "--count", "2", "--side", "36", "--seed", "1"]));
    for out in ["a", "b"] {
        let dest = root.join(out);
        ok(&dbiqa(root, &["synth", "--seed", "4", "--out", dest.to_str().unwrap()]));
    }
    let manifest = |d: &str| std::fs::read(root.join(d).join("manifest.jsonl")).unwrap();
    assert_eq!(manifest("a"), manifest("b"));
    assert_eq!(String::from_utf8(manifest("a")).unwrap().lines().count(), 2 * 39);
    for entry in std::fs::read_dir(root.join("a/src0000")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(root.join("a/src0000").join(&name)).unwrap(), std::fs::read(root.join("b/src0000").join(&name)).unwrap());
    }
}

#[test]
fn oracle_scores_are_perfect_on_protocol_tests() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    corpus(root, "5");
    ok(&dbiqa(root, &["oracle-scores"]));
    let scores = root.join("oracle/scores.csv");
    ok(&dbiqa(root, &["eval", "--scores", scores.to_str().unwrap(), "--split", "all"]));
    let report = json(&root.join("eval/report.json"));
    for test in ["d_test", "l_test", "p_test"] {
        assert_eq!(report["protocol"][test], 1.0, "{test}");
    }
    assert_eq!(report["sessions"][0]["srcc"], 1.0);
    assert!(std::fs::read_to_string(root.join("eval/report.txt")).unwrap().contains("D-test 1.0000"));
}

#[test]
fn dmos_truth_is_negated() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    corpus(root, "5");
    ok(&dbiqa(root, &["oracle-scores"]));
    // DMOS-like ground truth: the distortion level itself (higher is worse)
    let manifest = std::fs::read_to_string(root.join("synth/manifest.jsonl")).unwrap();
    let mut csv = String::from("path,score\n");
    for line in manifest.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        csv += &format!("{},{}\n", rec["relative_path"].as_str().unwrap(), rec["level"]);
    }
    let truth = root.join("dmos.csv");
    std::fs::write(&truth, csv).unwrap();
    let scores = root.join("oracle/scores.csv");
    let args = ["eval", "--scores", scores.to_str().unwrap(), "--truth", truth.to_str().unwrap(), "--split", "all"];
    ok(&dbiqa(root, &args));
    assert_eq!(json(&root.join("eval/report.json"))["sessions"][0]["srcc"], -1.0);
    ok(&dbiqa(root, &[&args[..], &["--dmos"]].concat()));
    assert_eq!(json(&root.join("eval/report.json"))["sessions"][0]["srcc"], 1.0);
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(code(&dbiqa(root, &["gradcheck", "--config", root.join("absent.toml").to_str().unwrap()])), 2);
    let bad = root.join("bad.toml");
    std::fs::write(&bad, "[synth]\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&dbiqa(root, &["gradcheck", "--config", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&dbiqa(root, &["gradcheck", "--trials", "0"])), 2);
    assert_eq!(code(&dbiqa(root, &["no-such-command"])), 2);
    assert_eq!(code(&dbiqa(root, &["synth", "--sources", root.join("missing").to_str().unwrap()])), 3);

    corpus(root, "5");
    let partial = root.join("partial.csv");
    std::fs::write(&partial, "path,score\nsrc0000/00_gaussian_blur_1.ppm,1.0\n").unwrap();
    assert_eq!(code(&dbiqa(root, &["eval", "--scores", partial.to_str().unwrap(), "--split", "all"])), 5);
    let garbage = root.join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let args = ["finetune", "--scnn", garbage.to_str().unwrap(), "--aux", garbage.to_str().unwrap()];
    assert_eq!(code(&dbiqa(root, &args)), 5);
}

#[test]
fn data_root_sets_default_paths() {
    let dir = tempfile::tempdir().unwrap();
    ok(&dbiqa(dir.path(), &["make-sources", "--count", "2", "--side", "32"]));
    assert!(dir.path().join("sources/src0001.ppm").is_file());
    assert!(dir.path().join("sources/run_config.toml").is_file());
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    corpus(root, "6");
    let cfg = root.join("run.toml");
    std::fs::write(
        &cfg,
        "[pretrain]\nshape_count = 16\n[pretrain.aux_adam]\nepochs = 1\nbatch_size = 8\n[finetune.adam]\nepochs = 1\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    ok(&dbiqa(root, &["pretrain", "--config", c, "--epochs", "1", "--batch-size", "32"]));
    let report = json(&root.join("pretrain/report.json"));
    assert_eq!(report["report"]["epochs"].as_array().unwrap().len(), 1);
    assert!(report["split"]["test"].as_array().unwrap().len() >= 1);
    ok(&dbiqa(root, &["pretrain", "--stream", "aux", "--config", c]));
    ok(&dbiqa(root, &["finetune", "--config", c]));
    assert!(root.join("finetune/model.json").is_file());
    ok(&dbiqa(root, &["predict"]));
    let scores = std::fs::read_to_string(root.join("predict/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 6 * 39 + 6);
    ok(&dbiqa(root, &["eval", "--scores", root.join("predict/scores.csv").to_str().unwrap()]));
    assert!(json(&root.join("eval/report.json"))["sessions"][0]["srcc"].is_number());
    ok(&dbiqa(root, &["oracle-scores"]));
    let (p, o) = (root.join("predict/scores.csv"), root.join("oracle/scores.csv"));
    ok(&dbiqa(root, &["gmad", "--defender", p.to_str().unwrap(), "--attacker", o.to_str().unwrap()]));
    let pairs = json(&root.join("gmad/gmad.json"));
    assert_eq!(pairs.as_array().unwrap().len(), 4);
}
