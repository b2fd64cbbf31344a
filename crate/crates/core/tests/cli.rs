use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use i2p::harness::{self, RunConfig};

fn tiny_config(out: &Path) -> Value {
    json!({
        "seed": 3,
        "encoder": { "image_size": 16, "patch_size": 4, "depth": 3, "width": 16, "heads": 2, "mlp_hidden": 32, "seed": 1 },
        "pretrain": { "steps": 3, "batch_size": 2, "warmup": 1 },
        "corpus": { "image_size": 16, "n_train": 24, "n_test_in": 8, "n_test_shift": 8 },
        "train": { "epochs": 2, "batch_size": 8 },
        "eta": 0.01,
        "eta_values": [0.01, 0.5],
        "k_values": [1, 0],
        "attention_images": 2,
        "importance_extremes": 4,
        "paths": { "out": out }
    })
}

fn write_config(dir: &Path, v: &Value) -> std::path::PathBuf {
    let path = dir.join("config.json.in");
    std::fs::write(&path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    path
}

fn i2p(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_i2p"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("I2P_THREADS", t),
        None => cmd.env_remove("I2P_THREADS"),
    };
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn full_pipeline_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), &tiny_config(&out));
    let cfg = cfg.to_str().unwrap();
    for stage in ["gen-corpus", "pretrain", "identify", "importance", "finetune", "eval", "diagnose"] {
        let o = i2p(&[stage, "--config", cfg], Some("1"));
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for param in ["eta", "k"] {
        let o = i2p(&["sweep", "--config", cfg, "--param", param], None);
        assert_eq!(code(&o), 0, "sweep {param}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "config.json",
        "backbone.i2pc",
        "critical_layer.json",
        "mask.i2pm",
        "importance.csv",
        "detector.i2pc",
        "train_log.csv",
        "metrics.json",
        "layer_report.csv",
        "attention_trace.csv",
        "sweep_eta.csv",
        "sweep_k.csv",
        "corpus/manifest.json",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let metrics: Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    let acc = metrics["test_in"]["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let sweep = std::fs::read_to_string(out.join("sweep_eta.csv")).unwrap();
    let values: Vec<f64> = sweep.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(values, vec![0.01, 0.5]);
    let layers = std::fs::read_to_string(out.join("layer_report.csv")).unwrap();
    assert_eq!(layers.lines().count(), 4);

    // Overrides land in the echoed config.
    let other = dir.path().join("other");
    let o = i2p(
        &["gen-corpus", "--config", cfg, "--seed", "8", "--out", other.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0);
    let echoed = RunConfig::load(&other.join("config.json")).unwrap();
    assert_eq!(echoed.seed, 8);
    assert_eq!(echoed.train.seed, 8);
    assert_ne!(
        harness::sha256_file(&other.join("corpus/manifest.json")).unwrap(),
        harness::sha256_file(&out.join("corpus/manifest.json")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        let cfg = write_config(dir.path(), &tiny_config(&out));
        let cfg = cfg.to_str().unwrap();
        for stage in ["gen-corpus", "pretrain", "identify", "importance", "finetune", "eval"] {
            assert_eq!(code(&i2p(&[stage, "--config", cfg], Some(threads))), 0, "{stage}");
        }
        let c = RunConfig::load(&out.join("config.json")).unwrap();
        hashes.push(harness::artifact_hashes(&c).unwrap());
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn usage_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&i2p(&["frobnicate"], None)), 2);
    assert_eq!(code(&i2p(&["eval"], None)), 2);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&i2p(&["eval", "--config", missing.to_str().unwrap()], None)), 2);

    let mut bad = tiny_config(&out);
    bad["eta"] = json!(2.0);
    let p = write_config(dir.path(), &bad);
    assert_eq!(code(&i2p(&["gen-corpus", "--config", p.to_str().unwrap()], None)), 2);

    let mut unknown = tiny_config(&out);
    unknown["learning_rate"] = json!(1.0);
    let p = write_config(dir.path(), &unknown);
    assert_eq!(code(&i2p(&["gen-corpus", "--config", p.to_str().unwrap()], None)), 2);

    let p = write_config(dir.path(), &tiny_config(&out));
    let p = p.to_str().unwrap();
    assert_eq!(code(&i2p(&["gen-corpus", "--config", p], Some("zero"))), 2);
    assert_eq!(code(&i2p(&["gen-corpus", "--config", p, "--mode", "bogus"], None)), 2);
    // Stage inputs that do not exist yet.
    assert_eq!(code(&i2p(&["finetune", "--config", p], None)), 2);
    assert_eq!(code(&i2p(&["--help"], None)), 0);
}

#[test]
fn single_class_training_split_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut v = tiny_config(&out);
    v["corpus"]["n_train"] = json!(1);
    v["corpus"]["n_test_in"] = json!(0);
    let p = write_config(dir.path(), &v);
    let p = p.to_str().unwrap();
    assert_eq!(code(&i2p(&["gen-corpus", "--config", p], None)), 0);
    assert_eq!(code(&i2p(&["pretrain", "--config", p], None)), 0);
    let o = i2p(&["identify", "--config", p], None);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_config_is_the_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let mut cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.paths.out, Path::new("runs/default"));
    cfg.paths = Default::default();
    assert_eq!(cfg, RunConfig::default());
}
