use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sa_ldl::cli::RunCheckpoint;
use sa_ldl::data::load_csv;
use sa_ldl::ldl::LabelSupport;
use sa_ldl::model::{Activation, Model, ModelCheckpoint};
use sa_ldl::staging::StagePartition;
use sa_ldl::trainer::{PredictionRule, StageParams};
use serde_json::{json, Value};
use tempfile::TempDir;

fn synthetic_config(out: &Path) -> Value {
    json!({
        "out_dir": out,
        "seed": 3,
        "support": { "min_label": 0, "max_label": 19 },
        "data": { "synthetic": {
            "profile": {
                "support": { "min_label": 0, "max_label": 19 },
                "boundaries": [0, 10],
                "levels": [1.0, 4.0],
                "dim": 6,
                "noise": 0.1
            },
            "n_per_label": 5
        }},
        "partition": { "kmeans": { "k": 2 } },
        "model": { "hidden": [8] },
        "train": { "epochs": 3, "batch_size": 8, "learning_rate": 0.01 },
        "ablation": { "seeds": [0, 1] },
        "eval": { "anchors": [5, 12, 18] }
    })
}

fn write_config(dir: &TempDir, cfg: &Value) -> PathBuf {
    let path = dir.path().join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn sa_ldl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sa-ldl"))
        .args(args)
        .output()
        .unwrap()
}

fn run_ok(command: &str, config: &Path) -> Output {
    let out = sa_ldl(&[command, "--config", config.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{command} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(command: &str, config: &Path) -> String {
    let out = sa_ldl(&[command, "--config", config.to_str().unwrap()]);
    assert!(!out.status.success(), "{command} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn meta(dir: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{command}.meta.json"))).unwrap()).unwrap()
}

#[test]
fn gen_data_is_deterministic_and_reloads() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg_a = write_config(&dir, &synthetic_config(&a));
    run_ok("gen-data", &cfg_a);
    let cfg_b = write_config(&dir, &synthetic_config(&b));
    run_ok("gen-data", &cfg_b);
    let support = LabelSupport::new(0, 19).unwrap();
    let mut total = 0;
    for f in ["train.csv", "val.csv", "test.csv"] {
        let (x, y) = (a.join("data").join(f), b.join("data").join(f));
        assert_eq!(fs::read(&x).unwrap(), fs::read(&y).unwrap());
        let d = load_csv(&x, support).unwrap();
        assert_eq!(d.feature_dim(), 6);
        total += d.len();
    }
    assert_eq!(total, 20 * 5);
    assert!(a.join("data/profile.json").exists());
    let m = meta(&a, "gen-data");
    assert_eq!(m["complete"], true);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn invalid_profile_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    let mut cfg = synthetic_config(dir.path());
    cfg["data"]["synthetic"]["profile"]["dim"] = json!(5);
    let path = write_config(&dir, &cfg);
    let err = run_err("gen-data", &path);
    assert!(err.contains("dim 5"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let mut cfg = synthetic_config(dir.path());
    cfg["train"]["learning_rat"] = json!(0.1);
    let path = write_config(&dir, &cfg);
    let err = run_err("train", &path);
    assert!(err.contains("learning_rat"), "{err}");
    let mut cfg = synthetic_config(dir.path());
    cfg["extra"] = json!(1);
    let path = write_config(&dir, &cfg);
    assert!(run_err("stage", &path).contains("extra"));
}

#[test]
fn missing_config_flag_is_an_error() {
    let out = sa_ldl(&["stage"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn decade_stage_absorbs_the_last_label() {
    let dir = TempDir::new().unwrap();
    let mut cfg = synthetic_config(dir.path());
    let support = json!({ "min_label": 0, "max_label": 100 });
    cfg["support"] = support.clone();
    cfg["data"]["synthetic"]["profile"]["support"] = support;
    cfg["data"]["synthetic"]["n_per_label"] = json!(3);
    cfg["data"]["synthetic"]["profile"]["boundaries"] = json!([0, 50]);
    cfg["partition"] = json!("decade");
    let path = write_config(&dir, &cfg);
    run_ok("stage", &path);
    let p: StagePartition =
        serde_json::from_str(&fs::read_to_string(dir.path().join("partition.json")).unwrap()).unwrap();
    assert_eq!(p.num_stages(), 10);
    assert_eq!(p.boundaries().last(), Some(&90));
    assert_eq!(p.stage_range(9), (90, 100));
}

fn write_rows(path: &Path, rows: &[(&str, i64, f64)]) {
    let mut s = String::from("id,age,f0\n");
    for (id, age, f) in rows {
        s.push_str(&format!("{id},{age},{f}\n"));
    }
    fs::write(path, s).unwrap();
}

fn csv_config(dir: &TempDir, k: usize) -> PathBuf {
    let train = dir.path().join("train.csv");
    write_rows(&train, &[("a", 1, 0.1), ("b", 2, 0.2), ("c", 9, 0.9), ("d", 10, 1.0)]);
    let other = dir.path().join("other.csv");
    write_rows(&other, &[("e", 3, 0.3)]);
    let cfg = json!({
        "out_dir": dir.path(),
        "support": { "min_label": 0, "max_label": 10 },
        "data": { "csv": { "train": train, "val": other, "test": other } },
        "partition": { "kmeans": { "k": k } }
    });
    write_config(dir, &cfg)
}

#[test]
fn kmeans_stage_from_csv_labels() {
    let dir = TempDir::new().unwrap();
    run_ok("stage", &csv_config(&dir, 2));
    let p: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("partition.json")).unwrap()).unwrap();
    // clusters {1,2} and {9,10}; the gap 3..8 splits at the midpoint
    assert_eq!(p["boundaries"], json!([0, 6]));
    assert_eq!(p["provenance"], "kmeans");
    assert_eq!(p["k"], 2);
}

#[test]
fn kmeans_with_too_many_stages_fails() {
    let dir = TempDir::new().unwrap();
    let err = run_err("stage", &csv_config(&dir, 5));
    assert!(!err.is_empty());
    assert_eq!(meta(dir.path(), "stage")["complete"], false);
}

#[test]
fn zero_epochs_emits_initial_checkpoint() {
    let dir = TempDir::new().unwrap();
    let mut cfg = synthetic_config(dir.path());
    cfg["train"]["epochs"] = json!(0);
    let path = write_config(&dir, &cfg);
    run_ok("train", &path);
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1);
    let ck = RunCheckpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(ck.stage_params, StageParams::initial(2));
    let m = ck.model.to_model().unwrap();
    assert_eq!(m.layer_dims(), &[6, 8, 20]);
}

#[test]
fn train_eval_analyze_pipeline() {
    let dir = TempDir::new().unwrap();
    let path = write_config(&dir, &synthetic_config(dir.path()));
    run_ok("train", &path);
    for f in ["checkpoint.json", "stage_params.json", "history.csv", "history.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 3);
    assert!(history.starts_with("epoch,train_kl,train_ce,train_mse,train_total,val_l1,val_kl,snapshot,sigmas,alphas"));

    run_ok("eval", &path);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["cs"].as_array().unwrap().len(), 11);
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\n"));

    run_ok("analyze", &path);
    for a in [5, 12, 18] {
        let curve = fs::read_to_string(dir.path().join(format!("curve_anchor_{a}.csv"))).unwrap();
        assert!(curve.starts_with("label,mean_cos,count\n"));
        assert_eq!(curve.lines().count(), 1 + 20);
    }
}

#[test]
fn cs_threshold_and_seed_overrides() {
    let dir = TempDir::new().unwrap();
    let path = write_config(&dir, &synthetic_config(dir.path()));
    run_ok("train", &path);
    let out = sa_ldl(&["eval", "--config", path.to_str().unwrap(), "--cs-thresholds", "1,5"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["cs"].as_array().unwrap().len(), 2);

    let other = dir.path().join("seeded");
    let out = sa_ldl(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(meta(&other, "train")["seed"], 11);
    assert_ne!(
        fs::read(dir.path().join("checkpoint.json")).unwrap(),
        fs::read(other.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn eval_without_checkpoint_names_the_path() {
    let dir = TempDir::new().unwrap();
    let path = write_config(&dir, &synthetic_config(dir.path()));
    let err = run_err("eval", &path);
    assert!(err.contains("checkpoint.json"), "{err}");
}

#[test]
fn oracle_checkpoint_scores_perfectly() {
    // one-hot features and a scaled identity layer: argmax recovers the label
    let dir = TempDir::new().unwrap();
    let support = LabelSupport::new(0, 4).unwrap();
    let mut s = String::from("id,age,f0,f1,f2,f3,f4\n");
    for label in 0..5 {
        let f: Vec<String> = (0..5).map(|i| if i == label { "1" } else { "0" }.to_string()).collect();
        s.push_str(&format!("x{label},{label},{}\n", f.join(",")));
    }
    let data = dir.path().join("data.csv");
    fs::write(&data, s).unwrap();

    let mut model = Model::zeros(&[5, 5], Activation::Relu).unwrap();
    // weights (row-major, out x in) then biases
    let mut params = vec![0.0; 30];
    for i in 0..5 {
        params[i * 5 + i] = 10.0;
    }
    model.set_params(&params).unwrap();
    let ck = RunCheckpoint {
        format: RunCheckpoint::FORMAT.into(),
        version: RunCheckpoint::VERSION,
        model: ModelCheckpoint::from_model(&model),
        stage_params: StageParams::initial(1),
        partition: StagePartition::manual(vec![0], support).unwrap(),
        prediction_rule: PredictionRule::Argmax,
    };
    let ck_path = dir.path().join("oracle.json");
    fs::write(&ck_path, serde_json::to_string(&ck).unwrap()).unwrap();
    let cfg = json!({
        "out_dir": dir.path(),
        "support": { "min_label": 0, "max_label": 4 },
        "data": { "csv": { "train": data, "val": data, "test": data } },
        "partition": { "manual": { "boundaries": [0] } },
        "eval": { "checkpoint": ck_path, "cs_thresholds": [5] }
    });
    run_ok("eval", &write_config(&dir, &cfg));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["mae"], 0.0);
    assert_eq!(report["cs"][0]["percent"], 100.0);
}

#[test]
fn run_ablation_writes_four_arms_per_seed() {
    let dir = TempDir::new().unwrap();
    let path = write_config(&dir, &synthetic_config(dir.path()));
    run_ok("run-ablation", &path);
    let rows = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4 * 2);
    let summary = fs::read_to_string(dir.path().join("ablation_summary.csv")).unwrap();
    let arms: Vec<String> = summary
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f[3], "2");
            format!("{},{}", f[0], f[1])
        })
        .collect();
    assert_eq!(arms, ["false,false", "true,false", "false,true", "true,true"]);
}
