use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn cfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(root: &Path) -> Value {
    json!({
        "schema_version": 1,
        "system": {
            "m": 16, "n": 2, "t": 10, "frames": 3, "s_bar": 5, "s_c": 2, "snr_db": 25.0,
            "layers_coarse": 2, "layers_fine": 2, "seed": 5
        },
        "train": {
            "learning_rate": 0.001, "batch_size": 8, "val_batch_size": 16,
            "train_count": 40, "val_count": 16, "test_count": 12,
            "max_epochs_per_stage": 2, "early_stop_patience": 2,
            "omega_bounds": [0.0, 1.0], "theta_floor": 1e-8, "seed": 3
        },
        "schemes": ["C-F-BSS", "F-BSS-WS", "BCD-MMV-baseline", "LISTA-GS-ablation"],
        "paths": {
            "dataset_dir": root.join("data"),
            "checkpoint_dir": root.join("ckpt"),
            "output_dir": root.join("out")
        },
        "splits": { "train_seed": 1, "val_seed": 2, "test_seed": 3 },
        "sweep": { "axis": "snr", "values": [10.0, 20.0] }
    })
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("run.json");
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

#[test]
fn full_pipeline_on_tiny_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config(dir.path()));
    let cfg = cfg.to_str().unwrap();

    let o = cfnet(&["gen-data", "--config", cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = fs::read(dir.path().join("data/train/samples.bin")).unwrap();
    let o = cfnet(&["gen-data", "--config", cfg]);
    assert_eq!(code(&o), 0);
    assert_eq!(first, fs::read(dir.path().join("data/train/samples.bin")).unwrap());

    let o = cfnet(&["train", "--config", cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["C-F-BSS.coarse.json", "C-F-BSS.fine.bin", "F-BSS-WS.fine.json", "LISTA-GS-ablation.single.json"] {
        assert!(dir.path().join("ckpt").join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(dir.path().join("out/train_log.C-F-BSS.jsonl")).unwrap();
    let header: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(header["config_hash"].as_str().unwrap().len(), 64);
    assert!(log.lines().count() > 2);

    let o = cfnet(&["evaluate", "--config", cfg, "--nmse-variant", "squared"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/evaluate.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash: "));
    assert!(lines.next().unwrap().starts_with("scheme,nmse_db,variant"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let cols: Vec<&str> = row.split(',').collect();
        let db: f64 = cols[1].parse().unwrap();
        assert!(db.is_finite() && db < 0.0, "{row}");
        assert_eq!(cols[2], "squared");
    }
    assert!(rows.iter().any(|r| r.starts_with("BCD-MMV-baseline,")));

    let o = cfnet(&["sweep", "--config", cfg, "--schemes", "C-F-BSS,BCD-MMV-baseline,C-F-BFSJ"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sweep = fs::read_to_string(dir.path().join("out/sweep_snr.csv")).unwrap();
    let body: Vec<&str> = sweep.lines().skip(2).collect();
    assert_eq!(body.len(), 6);
    assert!(body.iter().any(|l| l.contains("C-F-BFSJ,absent")), "{sweep}");
    assert!(dir.path().join("out/sweep_snr.json").exists());
}

#[test]
fn fine_stage_needs_a_coarse_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = tiny_config(dir.path());
    v["schemes"] = json!(["C-F-BSS"]);
    let cfg = write_config(dir.path(), &v);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&cfnet(&["gen-data", "--config", cfg])), 0);
    let o = cfnet(&["train", "--config", cfg, "--stage", "fine"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert_eq!(code(&cfnet(&["train", "--config", cfg, "--stage", "coarse"])), 0);
    assert!(!dir.path().join("ckpt/C-F-BSS.fine.json").exists());
    let o = cfnet(&["train", "--config", cfg, "--stage", "fine"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("ckpt/C-F-BSS.fine.json").exists());
}

#[test]
fn invalid_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = tiny_config(dir.path());
    v["system"].as_object_mut().unwrap().remove("t");
    let cfg = write_config(dir.path(), &v);
    let o = cfnet(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`t`"), "{}", stderr(&o));

    let mut v = tiny_config(dir.path());
    v["system"]["s_c"] = json!(9);
    let cfg = write_config(dir.path(), &v);
    assert_eq!(code(&cfnet(&["gen-data", "--config", cfg.to_str().unwrap()])), 2);

    let v = tiny_config(dir.path());
    let cfg = write_config(dir.path(), &v);
    let o = cfnet(&["evaluate", "--config", cfg.to_str().unwrap(), "--nmse-variant", "cubed"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn data_from_another_scenario_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let v = tiny_config(dir.path());
    let cfg = write_config(dir.path(), &v);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&cfnet(&["gen-data", "--config", cfg])), 0);
    // same paths, different sensing matrix seed
    let o = cfnet(&["train", "--config", cfg, "--seed", "77"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let phi = dir.path().join("data/test/phi.bin");
    let mut bytes = fs::read(&phi).unwrap();
    bytes[0] ^= 0x55;
    fs::write(&phi, bytes).unwrap();
    let o = cfnet(&["evaluate", "--config", cfg]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn verify_suites_report_per_check() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("verify.json");
    let o = cfnet(&["verify", "thresholds", "--out", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS thresholds/")).count(), 3, "{stdout}");
    let parsed: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(parsed[0]["passed"], json!(true));

    assert_eq!(code(&cfnet(&["verify", "nonsense"])), 2);
}
