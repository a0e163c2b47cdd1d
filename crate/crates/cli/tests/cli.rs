use std::path::Path;
use std::process::{Command, Output};

fn liftpose(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liftpose"))
        .args(args)
        .current_dir(dir)
        .env_remove("LIFTPOSE_OUTPUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = liftpose(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A small dataset and a one-epoch model in a fresh directory.
fn trained_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--frames", "1400", "--cameras", "2", "--seed", "3"],
    );
    ok(dir.path(), &["train", "--epochs", "1", "--hidden", "32", "--seed", "3"]);
    dir
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = ok(d.path(), &["synth", "--frames", "500", "--cameras", "4", "--seed", "1"]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("500 frames"));
    }
    for f in ["data/poses.jsonl", "data/cameras.toml"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
    let ds = liftpose::data::load(&a.path().join("data/poses.jsonl"), &a.path().join("data/cameras.toml")).unwrap();
    assert_eq!(ds.len(), 500);
    assert_eq!(ds.cameras.len(), 4);
}

#[test]
fn synth_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&liftpose(dir.path(), &["synth", "--frames", "0"])), 2);
    ok(dir.path(), &["synth", "--frames", "50", "--cameras", "2"]);
    assert_eq!(
        code(&liftpose(dir.path(), &["synth", "--frames", "50", "--cameras", "2"])),
        2
    );
    ok(dir.path(), &["synth", "--frames", "60", "--cameras", "2", "--force"]);
    assert_eq!(code(&liftpose(dir.path(), &["synth", "--frames", "many"])), 2);
}

#[test]
fn train_is_reproducible_and_loadable() {
    let dir = trained_workspace();
    let ck = liftpose::checkpoint::load_checkpoint(&dir.path().join("runs/model.ckpt")).unwrap();
    assert_eq!(ck.network.config().hidden_dim, 32);
    assert_eq!(ck.run["seed"], 3);
    let first = std::fs::read(dir.path().join("runs/loss.log")).unwrap();
    assert!(!first.is_empty());
    ok(dir.path(), &["train", "--epochs", "1", "--hidden", "32", "--seed", "3"]);
    assert_eq!(std::fs::read(dir.path().join("runs/loss.log")).unwrap(), first);
    let again = liftpose::checkpoint::load_checkpoint(&dir.path().join("runs/model.ckpt")).unwrap();
    assert_eq!(again.meta.fingerprint, ck.meta.fingerprint);
}

#[test]
fn eval_reports_and_verifies() {
    let dir = trained_workspace();
    let p = dir.path();
    ok(p, &["eval", "--oracle", "--out", "oracle.json"]);
    assert_eq!(read_json(&p.join("oracle.json"))["report"]["overall_mpjpe"], 0.0);

    ok(p, &["eval", "--protocol", "1", "--verify"]);
    ok(p, &["eval", "--protocol", "2"]);
    let ck = liftpose::checkpoint::load_checkpoint(&p.join("runs/model.ckpt")).unwrap();
    let r1 = read_json(&p.join("runs/eval-p1.json"));
    let r2 = read_json(&p.join("runs/eval-p2.json"));
    assert_eq!(r1["checkpoint_fingerprint"], ck.meta.fingerprint.as_str());
    assert_eq!(r1["report"]["fingerprint"], ck.meta.fingerprint.as_str());
    assert!(r2["report"]["overall_mpjpe"].as_f64() <= r1["report"]["overall_mpjpe"].as_f64());
    assert!(p.join("runs/eval-p1.txt").exists());

    ok(p, &["predict", "--index", "7", "--count", "2", "--plot", "plot.json"]);
    let pred = read_json(&p.join("runs/predictions.json"));
    for k in 0..2 {
        let from_predict = pred["frames"][k]["mpjpe_p1"].as_f64().unwrap();
        let from_eval = r1["per_frame"][7 + k].as_f64().unwrap();
        assert!(
            (from_predict - from_eval).abs() <= 1e-9,
            "{from_predict} vs {from_eval}"
        );
    }
    let plot = read_json(&p.join("plot.json"));
    assert_eq!(plot["joints"].as_array().unwrap().len(), 17);
    assert_eq!(plot["edges"].as_array().unwrap().len(), 16);
}

#[test]
fn noise_sweep_emits_one_row_per_sigma() {
    let dir = trained_workspace();
    ok(dir.path(), &["noise-sweep", "--sigmas", "0,5,10,15,20"]);
    let sweep = read_json(&dir.path().join("runs/noise-sweep.json"));
    assert_eq!(sweep["sweep"]["rows"].as_array().map(Vec::len), Some(5));
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&liftpose(p, &["eval", "--checkpoint", "missing.ckpt"])), 3);
    ok(p, &["synth", "--frames", "1400", "--cameras", "2"]);
    assert_eq!(code(&liftpose(p, &["eval", "--checkpoint", "missing.ckpt"])), 3);

    let data = p.join("data/poses.jsonl");
    let text = std::fs::read_to_string(&data).unwrap();
    std::fs::write(&data, text.replacen("\"version\":1", "\"version\":99", 1)).unwrap();
    assert_eq!(code(&liftpose(p, &["eval", "--oracle"])), 4);

    std::fs::write(p.join("fake.ckpt"), b"LIFTCKPT\x09\x00\x00\x00").unwrap();
    ok(p, &["synth", "--frames", "1400", "--cameras", "2", "--force"]);
    assert_eq!(code(&liftpose(p, &["eval", "--checkpoint", "fake.ckpt"])), 4);
    assert_eq!(code(&liftpose(p, &["eval", "--protocol", "3"])), 2);
    assert_eq!(code(&liftpose(p, &["ablate", "--variants", "no-such-thing"])), 2);
}

#[test]
fn gradcheck_passes_and_fails_on_demand() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for layer in ["linear", "batch_norm", "dropout", "relu", "network"] {
        assert!(text.contains(layer), "{layer} missing from:\n{text}");
    }
    assert_eq!(code(&liftpose(dir.path(), &["gradcheck", "--threshold", "1e-12"])), 5);
}

#[test]
fn configuration_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth", "--frames", "1400", "--cameras", "2"]);
    std::fs::write(p.join("run.toml"), "seed = 9\noutput_dir = \"from-config\"\n").unwrap();

    ok(p, &["eval", "--oracle", "--config", "run.toml"]);
    assert!(p.join("from-config/eval-p1.json").exists());

    let with_env = Command::new(env!("CARGO_BIN_EXE_liftpose"))
        .args(["eval", "--oracle", "--config", "run.toml"])
        .current_dir(p)
        .env("LIFTPOSE_OUTPUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(with_env.status.success());
    assert!(p.join("from-env/eval-p1.json").exists());
    let resolved = String::from_utf8_lossy(&with_env.stderr);
    assert!(resolved.contains("seed = 9"), "{resolved}");

    let with_flag = Command::new(env!("CARGO_BIN_EXE_liftpose"))
        .args([
            "eval",
            "--oracle",
            "--config",
            "run.toml",
            "--output-dir",
            "from-flag",
            "--seed",
            "4",
        ])
        .current_dir(p)
        .env("LIFTPOSE_OUTPUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(with_flag.status.success());
    let report = read_json(&p.join("from-flag/eval-p1.json"));
    assert_eq!(report["run"]["seed"], 4);

    std::fs::write(p.join("bad.toml"), "seed = 1\nbogus = 2\n").unwrap();
    assert_eq!(code(&liftpose(p, &["eval", "--oracle", "--config", "bad.toml"])), 4);
}
