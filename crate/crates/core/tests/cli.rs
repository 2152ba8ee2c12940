use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use comorbid::models::TrainHistory;
use comorbid::models::{load_model, ModelKind};

fn comorbid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comorbid"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn synth(dir: &Path) -> (String, String) {
    let config = path(dir, "synth.json");
    fs::write(
        &config,
        r#"{"n_subjects": 150, "n_codes": 18, "n_clusters": 3, "seed": 3}"#,
    )
    .unwrap();
    let out = path(dir, "data");
    let o = comorbid(&["synth", "--config", &config, "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (format!("{out}/diagnoses.csv"), format!("{out}/notes.csv"))
}

#[test]
fn synth_writes_three_parseable_files() {
    let dir = tempfile::tempdir().unwrap();
    let (diag, notes) = synth(dir.path());
    assert!(fs::read_to_string(&diag)
        .unwrap()
        .starts_with("SUBJECT_ID,HADM_ID,ICD9_CODE"));
    assert!(fs::read_to_string(&notes)
        .unwrap()
        .starts_with("SUBJECT_ID,HADM_ID,CATEGORY,TEXT"));
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("data/truth.json")).unwrap())
            .unwrap();
    assert_eq!(truth["subject_clusters"].as_object().unwrap().len(), 150);
}

#[test]
fn bad_synth_config_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let config = path(dir.path(), "bad.json");
    fs::write(&config, r#"{"p_in": 0.01, "p_out": 0.5}"#).unwrap();
    let out = path(dir.path(), "out");
    let o = comorbid(&["synth", "--config", &config, "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!Path::new(&out).exists());

    fs::write(&config, r#"{"n_subject": 10}"#).unwrap();
    let o = comorbid(&["synth", "--config", &config, "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!Path::new(&out).exists());
}

#[test]
fn train_and_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let (diag, notes) = synth(dir.path());
    let model = path(dir.path(), "dhf.json");
    let o = comorbid(&[
        "train",
        "--model",
        "dhf",
        "--diagnoses",
        &diag,
        "--notes",
        &notes,
        "--neg-ratio",
        "2",
        "--seed",
        "4",
        "--epochs",
        "3",
        "--out",
        &model,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved = load_model(&model).unwrap();
    assert_eq!(saved.model.kind(), ModelKind::Dhf);
    assert_eq!(saved.pipeline.as_ref().unwrap().train.neg_ratio.get(), 2);
    let history: TrainHistory =
        serde_json::from_str(&fs::read_to_string(dir.path().join("dhf.history.json")).unwrap())
            .unwrap();
    assert_eq!(history.epochs.len(), 3);

    let r1 = path(dir.path(), "r1.json");
    let r2 = path(dir.path(), "r2.json");
    for r in [&r1, &r2] {
        let o = comorbid(&[
            "eval",
            "--model",
            &model,
            "--diagnoses",
            &diag,
            "--notes",
            &notes,
            "--k",
            "5",
            "--out",
            r,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(&r1).unwrap();
    assert_eq!(a, fs::read(&r2).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    for key in [
        "test_accuracy",
        "test_macro_f1",
        "test_auc",
        "test_micro_f1",
        "hit_ratio_at_k",
    ] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert_eq!(report["k"], 5);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let (diag, _) = synth(dir.path());
    let out = path(dir.path(), "m.json");
    let o = comorbid(&[
        "train",
        "--model",
        "dhf",
        "--diagnoses",
        &diag,
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--notes"));
    assert_eq!(
        comorbid(&["train", "--model", "gmf", "--diagnoses", &diag])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(comorbid(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        comorbid(&[
            "train",
            "--model",
            "ncf",
            "--neg-ratio",
            "0",
            "--diagnoses",
            &diag
        ])
        .status
        .code(),
        Some(1)
    );
    assert!(!Path::new(&out).exists());
}

#[test]
fn data_and_numeric_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (diag, _) = synth(dir.path());
    let missing = path(dir.path(), "missing.csv");
    let out = path(dir.path(), "m.json");
    let o = comorbid(&[
        "train",
        "--model",
        "ncf",
        "--diagnoses",
        &missing,
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(2));

    let o = comorbid(&[
        "train",
        "--model",
        "ncf",
        "--diagnoses",
        &diag,
        "--learning-rate",
        "1e300",
        "--epochs",
        "5",
        "--batch-size",
        "4",
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning rate"));
}

#[test]
fn vocabulary_mismatch_names_identifier() {
    let dir = tempfile::tempdir().unwrap();
    let (diag, _) = synth(dir.path());
    let model = path(dir.path(), "ncf.json");
    let o = comorbid(&[
        "train",
        "--model",
        "ncf",
        "--diagnoses",
        &diag,
        "--epochs",
        "1",
        "--out",
        &model,
    ]);
    assert!(o.status.success());
    let other = path(dir.path(), "other.csv");
    let mut text = fs::read_to_string(&diag).unwrap();
    text.push_str("777777,1,C000\n");
    fs::write(&other, text).unwrap();
    let before = fs::read(&other).unwrap();
    let o = comorbid(&[
        "eval",
        "--model",
        &model,
        "--diagnoses",
        &other,
        "--out",
        &path(dir.path(), "r.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("777777"));
    assert_eq!(fs::read(&other).unwrap(), before);
}
