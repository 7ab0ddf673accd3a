//! CLI surface tests on a deliberately small world: verbs, overrides,
//! error records, artifact formats, and the method-isolation invariant.

use std::path::{Path, PathBuf};
use std::process::Command;

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_vlbc")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        r#"
[world]
seed = 3

[data]
train_size = 1200
test_size = 800
labeler_size = 1000

[pool]
size = 2500

[paths]
epochs = 8
training_codes = 128

[train_baseline]
epochs = 25

[train_finetune]
epochs = 10

[run]
method = "vlbc_minus"
seeds = [5]
"#,
    )
    .unwrap();
    path
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vlbc-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_writes_reports_and_manifest() {
    let dir = temp_dir("run");
    let cfg = small_config(&dir);
    let out = dir.join("out");
    let status = Command::new(exe())
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let reports = std::fs::read_to_string(out.join("reports.csv")).unwrap();
    assert!(reports.starts_with("task,method,seed,accuracy,f1,acc_diff,delta_a,delta_m"));
    assert!(reports.contains("vlbc_minus,5,"));
    for artifact in [
        "manifest.json",
        "seed_5/report.json",
        "seed_5/stats.json",
        "seed_5/plan.json",
        "seed_5/shortfall.json",
        "seed_5/xa.records",
        "seed_5/baseline_weights.txt",
        "seed_5/final_weights.txt",
        "seed_5/baseline_loss.csv",
        "seed_5/finetune_loss.csv",
        "seed_5/paths_loss.csv",
        "seed_5/fields.txt",
        "seed_5/labeler.txt",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }

    // serialized artifacts parse back
    let fields_text = std::fs::read_to_string(out.join("seed_5/fields.txt")).unwrap();
    assert!(vlbc_harness::formats::read_fields(&fields_text).is_ok());
    let xa_text = std::fs::read_to_string(out.join("seed_5/xa.records")).unwrap();
    let xa = vlbc_harness::formats::read_dataset(&xa_text).unwrap();
    assert!(!xa.is_empty());

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn method_and_seed_overrides() {
    let dir = temp_dir("override");
    let cfg = small_config(&dir);
    let out = dir.join("out");
    let status = Command::new(exe())
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--method", "baseline", "--seed", "9", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let reports = std::fs::read_to_string(out.join("reports.csv")).unwrap();
    assert!(reports.contains("baseline,9,"));
    // baseline runs produce no augmentation artifacts
    assert!(!out.join("seed_9/plan.json").exists());
    assert!(!out.join("seed_9/xa.records").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn invalid_config_exits_nonzero_with_error_record() {
    let dir = temp_dir("bad");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[run]\nseeds = []\n").unwrap();
    let output = Command::new(exe())
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let record: serde_json::Value =
        serde_json::from_str(stderr.trim()).expect("machine-readable error record");
    assert_eq!(record["kind"], "config");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn baseline_weights_identical_across_methods() {
    let dir = temp_dir("isolation");
    let cfg = small_config(&dir);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for (method, out) in [("baseline", &out_a), ("vlbc_minus", &out_b)] {
        let status = Command::new(exe())
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--method", method, "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(out_a.join("seed_5/baseline_weights.txt")).unwrap();
    let b = std::fs::read(out_b.join("seed_5/baseline_weights.txt")).unwrap();
    assert_eq!(a, b, "methods sharing (world, seed) must share baseline weights");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn report_verb_aggregates() {
    let dir = temp_dir("report");
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(
        &cfg_path,
        r#"
[world]
seed = 3

[data]
train_size = 900
test_size = 600
labeler_size = 800

[pool]
size = 1500

[paths]
epochs = 5
training_codes = 96

[train_baseline]
epochs = 15

[run]
method = "baseline"
seeds = [1, 2]
"#,
    )
    .unwrap();
    let out = dir.join("out");
    let status = Command::new(exe())
        .args(["run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let output = Command::new(exe()).arg("report").arg(&out).output().unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("accuracy_mean"));
    assert!(out.join("aggregate.csv").exists());
    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let data_line = agg.lines().nth(1).unwrap();
    assert!(data_line.starts_with("attr0,baseline,2,"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn inspect_stats_prints_tables() {
    let dir = temp_dir("stats");
    let cfg = small_config(&dir);
    let output = Command::new(exe())
        .args(["inspect-stats", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("attribute 0 vs protected"));
    assert!(stdout.contains("minority: p="));
    assert!(stdout.contains("deficits:"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn ablate_emits_all_sweep_points() {
    let dir = temp_dir("ablate");
    let cfg = small_config(&dir);
    let out = dir.join("out");
    let status = Command::new(exe())
        .args(["ablate", "--config"])
        .arg(&cfg)
        .args(["--fractions", "0.5,1.0", "--methods", "baseline", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("ablation_baseline.csv")).unwrap();
    assert!(csv.starts_with("point,fraction,seed,accuracy,acc_diff"));
    assert!(csv.contains("\n0.5,0.5,5,"));
    assert!(csv.contains("\n1,1,5,"));
    assert!(csv.contains("\n1.0+aug,1,5,"));
    let _ = std::fs::remove_dir_all(&dir);
}
