use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use icu_policy_cli::commands;
use icu_policy_cli::manifest::RunManifest;
use icu_policy_cli::{CliError, RunConfig};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

fn cli(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icu-policy"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = cli(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn config_in(dir: &Path) -> RunConfig {
    let mut c = RunConfig::load(&smoke_config()).unwrap();
    c.io.out_dir = dir.to_path_buf();
    c
}

#[test]
fn simulate_is_idempotent_and_manifest_lists_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    ok(&["simulate", "--config", cfg], dir.path());
    let first = std::fs::read(dir.path().join("cohort.jsonl")).unwrap();
    let splits = std::fs::read(dir.path().join("splits.csv")).unwrap();
    ok(&["simulate", "--config", cfg], dir.path());
    assert_eq!(first, std::fs::read(dir.path().join("cohort.jsonl")).unwrap());
    assert_eq!(splits, std::fs::read(dir.path().join("splits.csv")).unwrap());
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.files(), ["cohort.jsonl", "ground_truth.csv", "splits.csv"]);
    for f in manifest.files() {
        assert!(dir.path().join(f).exists());
    }
}

#[test]
fn config_errors_exit_two_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{ "sim": { "n_patients": 0 } }"#).unwrap();
    let out = dir.path().join("run");
    let o = cli(&["simulate", "--config", bad.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    std::fs::write(&bad, r#"{ "sim": { "n_patients": 10, "colour": 1 } }"#).unwrap();
    let o = cli(&["simulate", "--config", bad.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let o = cli(&["simulate", "--threads", "0"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_upstream_artifacts_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let o = cli(&["label", "--config", cfg], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run simulate first"));
    ok(&["simulate", "--config", cfg], dir.path());
    ok(&["label", "--config", cfg], dir.path());
    let o = cli(&["analyze", "--config", cfg], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run train first"));
    // A changed configuration makes the earlier outputs stale.
    let o = cli(&["train", "--config", cfg, "--precision", "double"], dir.path());
    assert!(o.status.success());
    let o = cli(&["evaluate", "--config", cfg], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run train again"));
}

#[test]
fn pipeline_outputs_have_documented_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let config = config_in(dir.path());
    icu_policy_cli::run_all(&config).unwrap();
    let read = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap();

    let table1 = read("metrics/table1.csv");
    let mut lines = table1.lines();
    assert_eq!(lines.next(), Some("task,model,runs,auroc_mean,auroc_std,auprc_mean,auprc_std"));
    let lstm: Vec<&str> = lines.filter(|l| l.split(',').nth(1) == Some("lstm")).collect();
    assert_eq!(lstm.len(), 14);
    for row in &lstm {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[2], "2");
        if !cells[3].is_empty() {
            assert!(!cells[4].is_empty(), "{row}");
        }
    }
    assert!(read("metrics/table2.csv").lines().count() > 6);

    let embedding = read("analysis/embedding.csv");
    assert_eq!(
        embedding.lines().next(),
        Some("patient_id,x,y,cluster,mortality_quantile,intervention_score_quantile")
    );
    assert_eq!(embedding.lines().count(), 31);
    let radar = read("analysis/radar.csv");
    assert_eq!(radar.lines().next(), Some("cluster,intervention,cluster_mean,global_mean"));
    assert_eq!((radar.lines().count() - 1) % 13, 0);
    assert!(read("analysis/embedding_cluster.svg").starts_with("<svg"));
    assert!(read("report.md").contains("## AUROC by task"));
    let preds = read(&commands::model_predictions_file(&config, 1));
    assert_eq!(preds.lines().count(), 31);
    assert_eq!(preds.lines().next().unwrap().split(',').count(), 15);
    assert!(read(&commands::loss_curve_file(0)).starts_with("step,train_loss,val_loss"));

    let rows = commands::compare(&config, "P000007", "P000007").unwrap();
    assert_eq!(rows.len(), 13);
    assert!(rows.iter().all(|r| r.difference == 0.0));
    let csv = read("compare/P000007_vs_P000007.csv");
    assert_eq!(csv.lines().count(), 14);
    let err = commands::compare(&config, "P000007", "nobody").unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn threads_do_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    for (dir, threads) in [(a.path(), "1"), (b.path(), "3")] {
        for cmd in ["simulate", "label", "train", "evaluate"] {
            ok(&[cmd, "--config", cfg, "--threads", threads, "--seed", "4"], dir);
        }
    }
    for f in ["checkpoints/seed_4.ckpt", "predictions/lstm_seed_4.csv", "metrics/metrics.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn error_codes_follow_error_kinds() {
    assert_eq!(CliError::Config("x".into()).exit_code(), 2);
    assert_eq!(
        CliError::MissingArtifact {
            what: "x".into(),
            command: "train"
        }
        .exit_code(),
        3
    );
    assert_eq!(CliError::Core(icu_policy::Error::Numeric("nan".into())).exit_code(), 4);
}
