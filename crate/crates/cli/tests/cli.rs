use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pctof(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pctof"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, name: &str, edit: impl Fn(String) -> String) -> PathBuf {
    let base = include_str!("../configs/default.toml")
        .replace("width = 160", "width = 16")
        .replace("height = 120", "height = 8")
        .replace("trials = 30", "trials = 2");
    let path = dir.join(name);
    std::fs::write(&path, edit(base)).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_field_is_a_config_error_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "bad.toml", |s| {
        s.replace("exposure_s = 1.0e-3\n", "")
    });
    let o = pctof(&["simulate"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("exposure_s"), "{}", stderr(&o));
}

#[test]
fn unknown_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "bad.toml", |s| {
        s.replace("[noise]\n", "[noise]\nshot_noise = 1.0\n")
    });
    let o = pctof(&["simulate"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn single_pixel_sensor_runs_every_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "one.toml", |s| {
        s.replace("width = 16", "width = 1")
            .replace("height = 8", "height = 1")
    });
    let out = tmp.path().join("out");
    for cmd in ["simulate", "calibrate", "measure", "validate", "compare"] {
        let o = pctof(&[cmd], &cfg, &out);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let truth = std::fs::read_to_string(out.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 1);
}

#[test]
fn corrupt_calibration_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "run.toml", |s| s);
    let out = tmp.path().join("out");
    assert!(pctof(&["calibrate"], &cfg, &out).status.success());
    let path = out.join("calibration.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    let o = pctof(&["measure"], &cfg, &out);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    std::fs::write(&path, b"not a table").unwrap();
    let o = pctof(&["validate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn reference_outside_the_sensitive_range_fails_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "run.toml", |s| {
        s.replace("reference_depth_m = 0.5", "reference_depth_m = 1.5")
    });
    let o = Command::new(env!("CARGO_BIN_EXE_pctof"))
        .args(["calibrate", "--doi", "0.5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("sensitive half-range"));
}

#[test]
fn heavy_noise_keeps_most_pixels_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "run.toml", |s| s);
    let out = tmp.path().join("out");
    for cmd in ["calibrate", "measure"] {
        let o = Command::new(env!("CARGO_BIN_EXE_pctof"))
            .args([cmd, "--noise", "0.05", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest-measure.json")).unwrap())
            .unwrap();
    let valid = manifest["outputs"]["pctof_valid_fraction"]
        .as_f64()
        .unwrap();
    assert!(valid >= 0.95, "valid fraction {valid}");
}

#[test]
fn manifest_records_seed_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "run.toml", |s| s);
    let out = tmp.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_pctof"))
        .args(["simulate", "--seed", "99", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("manifest-simulate.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["seed"], 99);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["config"].as_str().unwrap().contains("seed = 99"));
}

#[test]
fn seed_changes_noisy_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "run.toml", |s| s);
    let read = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let o = Command::new(env!("CARGO_BIN_EXE_pctof"))
            .args(["simulate", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success());
        std::fs::read(out.join("taps-pctof").join("tap_0.csv")).unwrap()
    };
    assert_eq!(read("5", "a"), read("5", "b"));
    assert_ne!(read("5", "a"), read("6", "c"));
}
