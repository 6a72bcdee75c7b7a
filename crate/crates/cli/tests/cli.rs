use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chrono::NaiveDate;
use osa_core::edf::{write_edf, RecordingInfo, SignalSpec};
use tempfile::TempDir;

fn osa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osa")).args(args).output().expect("spawn osa")
}

fn ok(args: &[&str]) -> String {
    let out = osa(args);
    assert!(
        out.status.success(),
        "osa {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = osa(args);
    assert!(!out.status.success(), "osa {args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn info() -> RecordingInfo {
    RecordingInfo {
        patient_id: "X X X cli-test".into(),
        recording_id: "Startdate 01-JAN-2010 cli".into(),
        start: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap().and_hms_opt(21, 30, 0).unwrap(),
        record_duration: 1.0,
    }
}

fn spec(label: &str, rate: usize) -> SignalSpec {
    SignalSpec {
        label: label.into(),
        transducer: String::new(),
        physical_dimension: "uV".into(),
        physical_min: -5.0,
        physical_max: 5.0,
        digital_min: -32768,
        digital_max: 32767,
        prefiltering: String::new(),
        samples_per_record: rate,
    }
}

/// Sines of distinct frequency per channel, `seconds` long.
fn write_recording(path: &Path, labels: &[&str], rate: usize, seconds: usize) {
    let specs: Vec<SignalSpec> = labels.iter().map(|l| spec(l, rate)).collect();
    let data: Vec<Vec<f64>> = (0..labels.len())
        .map(|c| {
            (0..seconds * rate)
                .map(|i| (std::f64::consts::TAU * (0.7 + c as f64) * i as f64 / rate as f64).sin())
                .collect()
        })
        .collect();
    fs::write(path, write_edf(&info(), &specs, &data).unwrap()).unwrap();
}

const CCSHS_LABELS: [&str; 12] = [
    "C3", "C4", "A1", "A2", "ECG1", "ECG2", "EMG1", "EMG2", "EMG3", "AIRFLOW", "THOR EFFORT", "ABDO EFFORT",
];

fn signal_rows(stdout: &str) -> Vec<&str> {
    stdout
        .lines()
        .skip_while(|l| !l.trim_start().starts_with("#"))
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .collect()
}

#[test]
fn edf_info_lists_every_signal() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("eight.edf");
    let labels = ["S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8"];
    write_recording(&path, &labels, 128, 30);
    let out = ok(&["edf-info", s(&path)]);
    let rows = signal_rows(&out);
    assert_eq!(rows.len(), 8, "{out}");
    for (row, label) in rows.iter().zip(labels) {
        assert!(row.contains(label) && row.contains("128"), "{row}");
    }
    assert!(out.contains("30 x 1 s = 30 s"), "{out}");
}

#[test]
fn edf_info_shows_ccshs_montage() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("night.edf");
    write_recording(&path, &CCSHS_LABELS, 64, 5);
    let rows_out = ok(&["edf-info", s(&path)]);
    let rows = signal_rows(&rows_out);
    assert_eq!(rows.len(), 12);
    for (row, label) in rows.iter().zip(CCSHS_LABELS) {
        assert!(row.contains(label), "{row}");
    }
}

#[test]
fn edf_info_rejects_truncated_file_with_offset() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cut.edf");
    write_recording(&path, &["ECG1"], 64, 4);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    let err = fails(&["edf-info", s(&path)]);
    assert!(err.contains("offset"), "{err}");

    fs::write(&path, &bytes[..200]).unwrap();
    let err = fails(&["edf-info", s(&path)]);
    assert!(err.contains("offset"), "{err}");
}

#[test]
fn preprocess_full_night_gives_494_windows() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_recording(&d.join("night.edf"), &CCSHS_LABELS, 256, 10 * 3600);
    fs::write(
        d.join("manifest.csv"),
        "subject_id,edf_path,oahi3,label\nccshs-0001,night.edf,0.4,NL\n",
    )
    .unwrap();
    // 29670 s of sleep starting one hour in.
    fs::write(
        d.join("windows.csv"),
        "subject_id,sleep_onset_sec,sleep_offset_sec\nccshs-0001,3600,33270\n",
    )
    .unwrap();
    let out = d.join("ecg.bin");
    let stdout = ok(&[
        "preprocess",
        "--manifest",
        s(&d.join("manifest.csv")),
        "--group",
        "ecg",
        "--seq-seconds",
        "60",
        "--annotations",
        s(&d.join("windows.csv")),
        "--out",
        s(&out),
    ]);
    assert!(stdout.starts_with("494 segments x 15360 samples x 2 channels"), "{stdout}");
    let (tensor, provenance) = osa_core::pipeline::read_tensor(&out).unwrap();
    assert_eq!((tensor.len(), tensor.seq_len(), tensor.channels()), (494, 15360, 2));
    assert!(provenance.contains("ccshs-0001"));
    assert!(d.join("ecg.resolved-config.toml").exists());
}

#[test]
fn preprocess_rejects_empty_manifest() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("manifest.csv");
    fs::write(&manifest, "subject_id,edf_path,oahi3,label\n").unwrap();
    let out = dir.path().join("t.bin");
    fails(&["preprocess", "--manifest", s(&manifest), "--out", s(&out)]);
    assert!(!out.exists());
}

/// Expected segment count from the sleep-window sidecar alone.
fn expected_segments(windows_csv: &Path, seq_seconds: f64) -> usize {
    fs::read_to_string(windows_csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
            ((f[1] - f[0]) / seq_seconds).floor() as usize
        })
        .sum()
}

#[test]
fn synth_then_preprocess_matches_window_oracle() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    ok(&["synth", "--out", s(&cohort), "--subjects-per-class", "2", "--duration-secs", "400"]);
    assert!(cohort.join("resolved-config.toml").exists());
    let manifest = fs::read_to_string(cohort.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 9);

    let out = dir.path().join("resp.bin");
    let stdout = ok(&[
        "preprocess",
        "--manifest",
        s(&cohort.join("manifest.csv")),
        "--group",
        "resp",
        "--seq-seconds",
        "10",
        "--out",
        s(&out),
    ]);
    let n = expected_segments(&cohort.join("sleep_windows.csv"), 10.0);
    assert!(stdout.starts_with(&format!("{n} segments x 640 samples x 3 channels")), "{stdout}");
}

#[test]
fn split_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    ok(&["synth", "--out", s(&cohort), "--subjects-per-class", "9", "--duration-secs", "400"]);
    let manifest = cohort.join("manifest.csv");
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&["split", "--manifest", s(&manifest), "--seed", seed, "--out", s(&out)]);
        fs::read_to_string(out).unwrap()
    };
    let a = run("4", "a.json");
    assert_eq!(a, run("4", "b.json"));
    assert_ne!(a, run("5", "c.json"));
    let plan: serde_json::Value = serde_json::from_str(&a).unwrap();
    let sizes: Vec<usize> = ["test_subjects", "train_subjects", "val_subjects"]
        .iter()
        .map(|k| plan[k].as_array().unwrap().len())
        .collect();
    assert_eq!(sizes, [8, 18, 6]);
    assert!(dir.path().join("a.resolved-config.toml").exists());
}

#[test]
fn train_and_evaluate_on_synthetic_cohort() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let cohort = d.join("cohort");
    ok(&["synth", "--out", s(&cohort)]);
    let manifest = cohort.join("manifest.csv");
    let split = d.join("split.json");
    ok(&["split", "--manifest", s(&manifest), "--seed", "1", "--out", s(&split)]);
    let tensor = |group: &str, set: &str| {
        let out = d.join(format!("{group}-{set}.bin"));
        ok(&[
            "preprocess",
            "--manifest",
            s(&manifest),
            "--group",
            group,
            "--seq-seconds",
            "10",
            "--split",
            s(&split),
            "--set",
            set,
            "--out",
            s(&out),
        ]);
        out
    };
    let (train, val, test) = (tensor("ecg", "train"), tensor("ecg", "val"), tensor("ecg", "test"));
    let run = d.join("run");
    ok(&[
        "train",
        "--train",
        s(&train),
        "--val",
        s(&val),
        "--arch",
        "desk",
        "--lr",
        "0.001",
        "--iterations",
        "500",
        "--seed",
        "1",
        "--out",
        s(&run),
    ]);
    for f in ["model.ckpt", "curve.csv", "train-meta.json", "resolved-config.toml"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let eval = d.join("eval");
    let ckpt = run.join("model.ckpt");
    let stdout = ok(&["evaluate", "--checkpoint", s(&ckpt), "--tensor", s(&test), "--out", s(&eval)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    let accuracy = report["accuracy"].as_f64().unwrap();
    assert!(accuracy >= 0.95, "test accuracy {accuracy}\n{stdout}");
    assert!(stdout.starts_with("Accuracy"));
    assert_eq!(fs::read_to_string(eval.join("report.txt")).unwrap(), stdout);

    let eeg = tensor("eeg", "test");
    let err = fails(&["evaluate", "--checkpoint", s(&ckpt), "--tensor", s(&eeg), "--out", s(&d.join("bad"))]);
    assert!(err.contains("conv1"), "{err}");
}
