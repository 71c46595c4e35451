use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecg_arrhythmia::dataset::{DatasetManifest, Split};
use ecg_arrhythmia::record::{write_record, ArrhythmiaClass, EcgRecord, QrsAnnotation};
use ecg_arrhythmia::synth::{pulse_record, sinusoid_record, PulseTrain};
use serde_json::Value;
use tempfile::TempDir;

fn ecg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ecg(args);
    assert!(
        out.status.success(),
        "ecg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Two corpora of class-dependent sinusoids with unequal class counts.
fn write_corpus(dir: &Path) {
    let counts = [7, 6, 8, 6, 9];
    let mut n = 0;
    for (c, &count) in ArrhythmiaClass::ALL.iter().zip(&counts) {
        for i in 0..count {
            let corpus = if i % 2 == 0 { "alpha" } else { "beta" };
            let id = format!("r{n:03}");
            let rec = sinusoid_record(&id, *c, 250.0, 512, 0.37 * n as f64).unwrap();
            let sub = dir.join(corpus);
            fs::create_dir_all(&sub).unwrap();
            write_record(&rec, &sub.join(&id)).unwrap();
            n += 1;
        }
    }
}

fn prepared_manifest(tmp: &TempDir) -> (PathBuf, PathBuf) {
    let data = tmp.path().join("data");
    write_corpus(&data);
    let built = tmp.path().join("built.json");
    let balanced = tmp.path().join("balanced.json");
    let split = data.join("split.json");
    ok(&["dataset", "build", "--data-dir", s(&data), "--out", s(&built)]);
    ok(&[
        "--seed",
        "4",
        "dataset",
        "balance",
        "--manifest",
        s(&built),
        "--out",
        s(&balanced),
    ]);
    ok(&[
        "--seed",
        "4",
        "dataset",
        "split",
        "--manifest",
        s(&balanced),
        "--test-fraction",
        "0.2",
        "--folds",
        "3",
        "--out",
        s(&split),
    ]);
    (data, split)
}

const TINY: [&str; 12] = [
    "--arch",
    "cnn1d",
    "--input-len",
    "64",
    "--filters",
    "4",
    "--epochs",
    "3",
    "--batch-size",
    "8",
    "--lr",
    "0.01",
];

#[test]
fn detect_finds_every_pulse() {
    let tmp = TempDir::new().unwrap();
    let train = PulseTrain::new(500.0, 10.0, 75.0);
    let rec = pulse_record("p", &train, 0.0, 0).unwrap();
    let stem = tmp.path().join("p");
    write_record(&rec, &stem).unwrap();
    let out = tmp.path().join("p.qrs.json");
    ok(&["detect", "--in", s(&stem), "--lead", "II", "--out", s(&out)]);
    let ann: QrsAnnotation = serde_json::from_value(json(&out)).unwrap();
    let expected: Vec<usize> = train.centers();
    assert_eq!(ann.r_peaks.len(), expected.len());
    for (r, c) in ann.r_peaks.iter().zip(&expected) {
        assert!(r.abs_diff(*c) <= 2, "peak {r} vs pulse {c}");
    }
    assert!(ann.q_peaks.iter().zip(&ann.r_peaks).all(|(q, r)| q < r));
    assert!(ann.s_peaks.iter().zip(&ann.r_peaks).all(|(s, r)| s > r));
}

#[test]
fn rasterize_matches_core_golden() {
    let tmp = TempDir::new().unwrap();
    let rec = EcgRecord::new("zeros", 500.0, vec![vec![0.0; 5000]; 12], None).unwrap();
    let stem = tmp.path().join("zeros");
    write_record(&rec, &stem).unwrap();
    let png = tmp.path().join("zeros.png");
    ok(&["rasterize", "--in", &format!("{}.json", s(&stem)), "--out", s(&png)]);
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/zeros.png");
    assert_eq!(fs::read(&png).unwrap(), fs::read(golden).unwrap());

    let coarse = tmp.path().join("coarse.png");
    ok(&["rasterize", "--in", s(&stem), "--supersample", "1", "--out", s(&coarse)]);
    assert_eq!(&fs::read(&coarse).unwrap()[1..4], b"PNG");
    assert_eq!(
        ecg(&["rasterize", "--in", s(&stem), "--supersample", "0", "--out", s(&coarse)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn usage_errors_exit_2() {
    let out = ecg(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = ecg(&[
        "dataset",
        "split",
        "--manifest",
        "m.json",
        "--folds",
        "1",
        "--out",
        "o.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = ecg(&["filter", "--order", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(ecg(&["--help"]).status.success());
}

#[test]
fn missing_input_exits_1_and_names_it() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope");
    let out = ecg(&["detect", "--in", s(&missing), "--out", s(&tmp.path().join("x.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
    let out = ecg(&["report", "--in", s(&tmp.path().join("absent.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn dataset_commands_compose() {
    let tmp = TempDir::new().unwrap();
    let (data, split_path) = prepared_manifest(&tmp);
    let built = DatasetManifest::load(&tmp.path().join("built.json")).unwrap();
    assert_eq!(built.entries.len(), 36);
    assert!(built
        .entries
        .iter()
        .all(|e| e.source_corpus == "alpha" || e.source_corpus == "beta"));

    let m = DatasetManifest::load(&split_path).unwrap();
    assert_eq!(m.seed, 4);
    let active: Vec<_> = m.entries.iter().filter(|e| e.is_active()).collect();
    assert_eq!(active.len(), 30);
    assert_eq!(m.test_entries().count(), 6);
    assert_eq!(m.n_folds(), 3);
    for e in &active {
        assert_eq!(e.fold.is_some(), e.split == Some(Split::TrainVal));
    }

    // Exclusion leaves the input untouched and drops the listed ids.
    let ids = tmp.path().join("ids.txt");
    let victim = &m.test_entries().next().unwrap().record_id.clone();
    fs::write(&ids, format!("{victim}\n")).unwrap();
    let before = fs::read(&split_path).unwrap();
    let excl = tmp.path().join("excl.json");
    ok(&[
        "dataset",
        "exclude",
        "--manifest",
        s(&split_path),
        "--ids",
        s(&ids),
        "--out",
        s(&excl),
    ]);
    assert_eq!(fs::read(&split_path).unwrap(), before);
    let e = DatasetManifest::load(&excl).unwrap();
    assert_eq!(e.test_entries().count(), 5);
    assert!(data.join("alpha").exists());
}

#[test]
fn dataset_commands_are_idempotent() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (_, pa) = prepared_manifest(&a);
    let (_, pb) = prepared_manifest(&b);
    assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
}

#[test]
fn train_eval_cv_report() {
    let tmp = TempDir::new().unwrap();
    let (_, manifest) = prepared_manifest(&tmp);
    let ckpt = tmp.path().join("model");

    let mut args = vec!["train", "--manifest", s(&manifest), "--fold", "1", "--out", s(&ckpt)];
    args.extend(TINY);
    ok(&args);
    let meta = json(&tmp.path().join("model.json"));
    assert_eq!(meta["arch"]["kind"], "cnn1d");
    assert!(tmp.path().join("model.params").exists());
    let history = fs::read_to_string(tmp.path().join("model.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);

    let eval = tmp.path().join("eval.json");
    ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--out",
        s(&eval),
    ]);
    let rep = json(&eval);
    assert_eq!(rep["predictions"].as_array().unwrap().len(), 6);
    let eval2 = tmp.path().join("eval2.json");
    ok(&[
        "eval",
        "--ckpt",
        &format!("{}.json", s(&ckpt)),
        "--manifest",
        s(&manifest),
        "--out",
        s(&eval2),
    ]);
    assert_eq!(fs::read(&eval).unwrap(), fs::read(&eval2).unwrap());

    let table = ok(&["report", "--in", s(&eval)]);
    let table = String::from_utf8_lossy(&table.stdout);
    assert!(table.starts_with("System"), "{table}");
    assert!(table.contains(rep["system"].as_str().unwrap()));
    let png = tmp.path().join("cm.png");
    ok(&["report", "--in", s(&eval), "--format", "png", "--out", s(&png)]);
    assert_eq!(&fs::read(&png).unwrap()[1..4], b"PNG");
    assert_eq!(
        ecg(&["report", "--in", s(&eval), "--format", "png"]).status.code(),
        Some(1)
    );

    let serial = tmp.path().join("cv1");
    let parallel = tmp.path().join("cv3");
    let mut args = vec!["cv", "--manifest", s(&manifest), "--out", s(&serial)];
    args.extend(TINY);
    ok(&args);
    let mut args = vec!["--jobs", "3", "cv", "--manifest", s(&manifest), "--out", s(&parallel)];
    args.extend(TINY);
    ok(&args);
    let summary = json(&serial.join("cv_report.json"));
    assert_eq!(summary["folds"].as_array().unwrap().len(), 3);
    for name in ["cv_report.json", "fold_0.json", "fold_2.json"] {
        assert_eq!(
            fs::read(serial.join(name)).unwrap(),
            fs::read(parallel.join(name)).unwrap(),
            "{name}"
        );
    }
    let cv_json = ok(&["report", "--in", s(&serial.join("cv_report.json")), "--format", "json"]);
    let parsed: Value = serde_json::from_slice(&cv_json.stdout).unwrap();
    assert_eq!(parsed, summary);
    let cv_png = tmp.path().join("cv.png");
    ok(&[
        "report",
        "--in",
        s(&serial.join("cv_report.json")),
        "--format",
        "png",
        "--out",
        s(&cv_png),
    ]);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"filter": {"fs": 250, "order": 3, "points": 8}}"#).unwrap();
    let out = ok(&["--config", s(&cfg), "filter", "--order", "2"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["spec"]["sampling_hz"], 250.0);
    assert_eq!(v["spec"]["order"], 2);
    assert_eq!(v["response"].as_array().unwrap().len(), 9);
    assert_eq!(v["a"].as_array().unwrap().len(), 5);

    fs::write(&cfg, "[1, 2]").unwrap();
    assert_eq!(ecg(&["--config", s(&cfg), "filter"]).status.code(), Some(2));
}

#[test]
fn filter_reports_band_edges() {
    let out = ok(&["filter", "--points", "100"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["stable"], true);
    let resp = v["response"].as_array().unwrap();
    // 250 Hz Nyquist over 100 points puts 5 Hz at index 2 and 15 Hz at index 6.
    for i in [2, 6] {
        let db = resp[i]["db"].as_f64().unwrap();
        assert!((db + 3.0103).abs() < 1e-3, "{db}");
    }
}
