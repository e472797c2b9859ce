use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biam::data::{generate_synthetic, SyntheticSpec};
use biam::model::checkpoint;
use biam::BiamParams;

const SMALL: &[&str] = &["--images=64", "--seen-classes=6", "--unseen-classes=2", "--h=4", "--w=4", "--patch=2"];

fn biam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biam"))
        .args(args)
        .env_remove("BIAM_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = biam(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn flag(key: &str, path: &Path) -> String {
    format!("--{key}={}", path.display())
}

/// Small synthetic dataset under `dir/data`; returns the manifest path.
fn small_data(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["synth".to_string(), flag("out", &data)];
    args.extend(SMALL.iter().map(|s| s.to_string()));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
    data.join("manifest.json")
}

fn train(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let (m, o) = (flag("manifest", manifest), flag("out", out));
    let mut args = vec!["train", m.as_str(), o.as_str(), "--epochs=3", "--batch-size=8", "--deterministic-log"];
    args.extend_from_slice(extra);
    ok(&args)
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_writes_the_desk_fixture_by_default() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", &flag("out", dir.path())]);
    let expected = generate_synthetic(&SyntheticSpec::desk()).unwrap();
    assert_eq!(fs::read(dir.path().join("features.brf")).unwrap(), expected.store.encode().unwrap());
    assert_eq!(fs::read_to_string(dir.path().join("manifest.json")).unwrap(), expected.manifest.to_json());
    assert_eq!(fs::read_to_string(dir.path().join("embeddings.txt")).unwrap(), expected.embeddings.to_text());
}

#[test]
fn pipeline_runs_and_leaves_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path());
    let before = snapshot(manifest.parent().unwrap());
    let run = dir.path().join("run");
    let out = train(&manifest, &run, &[]);

    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), log);
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        assert_eq!(line["epoch"], i + 1);
        assert!(line["mean_loss"].is_f64() && line["lr"].is_f64());
        assert!(line.get("wall_ms").is_none());
    }

    let (m, o) = (flag("manifest", &manifest), flag("out", &run));
    let eval = ok(&["eval", &m, &o, "--mode=gzsl"]);
    let table = String::from_utf8(eval.stdout).unwrap();
    assert!(table.contains("mode gzsl") && table.contains("F1@3") && table.contains("F1@5"), "{table}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("eval_gzsl.json")).unwrap()).unwrap();
    assert_eq!(report["per_class_ap"].as_object().unwrap().len(), 8);

    ok(&["predict", &m, &o, "--top-k=2", "--split=train", "--mode=standard"]);
    let preds: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("predictions.json")).unwrap()).unwrap();
    assert_eq!(preds.as_array().unwrap().len(), 48);
    assert_eq!(preds[0]["labels"].as_array().unwrap().len(), 2);

    ok(&["attend", &m, &o, "--ids=img00001,img00060", "--classes=seen00,unseen01"]);
    let maps = run.join("heatmaps");
    assert!(maps.join("img00060__unseen01.pgm").is_file());
    assert_eq!(fs::read_dir(&maps).unwrap().count(), 4);

    assert_eq!(snapshot(manifest.parent().unwrap()), before);
}

#[test]
fn reruns_are_byte_identical_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path());
    let runs: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("run{i}"))).collect();
    train(&manifest, &runs[0], &["--threads=1"]);
    train(&manifest, &runs[1], &["--threads=1"]);
    train(&manifest, &runs[2], &["--threads=2"]);
    for run in &runs {
        ok(&["eval", &flag("manifest", &manifest), &flag("out", run), "--mode=gzsl", "--threads=1"]);
    }
    let first = snapshot(&runs[0]);
    for run in &runs[1..] {
        let other = snapshot(run);
        assert_eq!(first.len(), other.len());
        for ((pa, a), (_, b)) in first.iter().zip(&other) {
            let name = pa.file_name().unwrap().to_string_lossy();
            if name == "run_config.json" {
                // records its own --out
                let strip = |bytes: &[u8]| {
                    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                    v.as_object_mut().unwrap().remove("out");
                    v
                };
                assert_eq!(strip(a), strip(b));
            } else {
                assert!(a == b, "{name} differs");
            }
        }
    }
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path());
    let run = dir.path().join("run");
    train(&manifest, &run, &["--lr=0", "--seed=4"]);
    let trained = checkpoint::load(&run.join("model.ckpt")).unwrap();
    let init = BiamParams::init(&trained.config).unwrap();
    assert_eq!(trained.config.seed, 4);
    let a: Vec<_> = trained.learnable().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let b: Vec<_> = init.learnable().into_iter().map(|(n, t)| (n, t.clone())).collect();
    assert_eq!(a, b);
}

#[test]
fn config_file_flags_and_seed_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path());
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"epochs": 5, "batch_size": 16, "lr": 0.01}"#).unwrap();
    let run = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_biam"))
        .args(["train", "--config", cfg.to_str().unwrap(), &flag("manifest", &manifest), &flag("out", &run)])
        .args(["--epochs=2", "--deterministic-log"])
        .env("BIAM_SEED", "11")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["epochs"], 2);
    assert_eq!(resolved["batch_size"], 16);
    assert_eq!(resolved["lr"], 0.01);
    assert_eq!(resolved["seed"], 11);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path());
    let run = dir.path().join("run");
    let (m, o) = (flag("manifest", &manifest), flag("out", &run));
    let code = |args: &[&str]| biam(args).status.code().unwrap();

    assert_eq!(code(&["train", &m, &o, "--learning-rate=1"]), 2);
    assert_eq!(code(&["train", &m, &o, "--heads=3"]), 2);
    assert_eq!(code(&["train", &m]), 2);
    assert_eq!(code(&["train", &o, "--manifest=/nonexistent/manifest.json"]), 3);
    assert_eq!(code(&["train", &m, &o, "--d-r=64"]), 3);
    assert_eq!(code(&["eval", &m, &o]), 3, "no checkpoint yet");

    fs::write(dir.path().join("data/features.brf"), b"BRF9").unwrap();
    assert_eq!(code(&["train", &m, &o]), 3);
    assert!(!run.exists(), "failed commands must not create outputs");
}

#[test]
fn attend_checks_names_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_data(dir.path());
    let run = dir.path().join("run");
    train(&manifest, &run, &[]);
    let (m, o) = (flag("manifest", &manifest), flag("out", &run));
    let out = biam(&["attend", &m, &o, "--ids=img00001", "--classes=seen00,walrus"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("walrus"));
    assert!(!run.join("heatmaps").exists());
}

#[test]
fn verify_passes_and_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["verify", &flag("out", dir.path()), "--deterministic-log"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    assert!(text.contains("grad/end_to_end") && text.contains("oracle/metrics"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}
