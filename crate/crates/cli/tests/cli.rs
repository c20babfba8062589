use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sparsepat::metrics::{ssim, CSV_HEADER};
use sparsepat::Image2D;

fn sparsepat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsepat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SPARSEPAT_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sparsepat(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn phantom_writes_deterministic_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        ok(&[
            "phantom",
            "--kind",
            "circles",
            "--size",
            "64",
            "--seed",
            "7",
            "--out",
            s(dir.path()),
        ]);
    }
    for name in ["circles_s7.ptns", "circles_s7.pgm", "run.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let pgm = fs::read(a.path().join("circles_s7.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
    assert_eq!(*pgm.iter().skip(13).max().unwrap(), 255);
}

#[test]
fn bogus_kind_is_a_usage_error() {
    let out = sparsepat(&["phantom", "--kind", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("circles") && err.contains("shepp_logan") && err.contains("vessels"),
        "{err}"
    );
}

#[test]
fn help_and_unknown_flags() {
    for cmd in [
        "phantom",
        "simulate",
        "reconstruct",
        "make-dataset",
        "train",
        "fine-tune",
        "eval",
        "report",
        "experiment",
    ] {
        assert_eq!(sparsepat(&[cmd, "--help"]).status.code(), Some(0), "{cmd}");
    }
    assert_eq!(sparsepat(&["phantom", "--frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsepat(&[
        "reconstruct",
        "--input",
        "/nonexistent/data.ptns",
        "--out",
        s(&dir.path().join("x.ptns")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dense_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p0 = Image2D::from_fn(64, |y, x| {
        let d2 = (y as f64 - 30.0).powi(2) + (x as f64 - 35.0).powi(2);
        (-d2 / 32.0).exp()
    });
    let p0_path = dir.path().join("p0.ptns");
    p0.write_ptns(&p0_path).unwrap();
    let data = dir.path().join("sensors.ptns");
    let image = dir.path().join("tr.ptns");
    ok(&[
        "simulate",
        "--input",
        s(&p0_path),
        "--detectors",
        "202",
        "--radius",
        "30",
        "--merge-coincident",
        "--out",
        s(&data),
    ]);
    assert!(dir.path().join("sensors.json").exists());
    ok(&["reconstruct", "--input", s(&data), "--out", s(&image)]);
    let tr = Image2D::read_ptns(&image).unwrap();
    let score = ssim(&tr, &p0).unwrap();
    assert!(score >= 0.9, "SSIM {score}");
}

#[test]
fn geometry_errors_surface_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let p0_path = dir.path().join("p0.ptns");
    Image2D::zeros(64).write_ptns(&p0_path).unwrap();
    let out = sparsepat(&[
        "simulate",
        "--input",
        s(&p0_path),
        "--detectors",
        "202",
        "--radius",
        "30",
        "--out",
        s(&dir.path().join("d.ptns")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sensor geometry rejected"));
}

#[test]
fn zero_sensor_data_reconstructs_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p0_path = dir.path().join("p0.ptns");
    Image2D::zeros(32).write_ptns(&p0_path).unwrap();
    let data = dir.path().join("d.ptns");
    let image = dir.path().join("tr.ptns");
    ok(&[
        "simulate",
        "--input",
        s(&p0_path),
        "--detectors",
        "10",
        "--out",
        s(&data),
    ]);
    ok(&["reconstruct", "--input", s(&data), "--out", s(&image)]);
    assert!(Image2D::read_ptns(&image).unwrap().is_all_zero());
}

#[test]
fn dataset_train_eval_report_flow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "make-dataset",
        "--kind",
        "circles",
        "--grid",
        "32",
        "--detectors",
        "10",
        "--splits",
        "train=4,test=2",
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    let run: serde_json::Value = serde_json::from_slice(&fs::read(data.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "make-dataset");
    assert_eq!(run["settings"]["spec"]["seed"], 3);

    let weights = |dir: &Path| fs::read(dir.join("checksums.sha256")).unwrap();
    let fd_a = dir.path().join("fd_a");
    let fd_b = dir.path().join("fd_b");
    for out in [&fd_a, &fd_b] {
        ok(&[
            "train",
            "--arch",
            "fd_unet",
            "--f1",
            "8",
            "--k1",
            "1",
            "--iters",
            "6",
            "--seed",
            "1",
            "--data",
            s(&data),
            "--out",
            s(out),
        ]);
    }
    assert_eq!(weights(&fd_a), weights(&fd_b));
    let unet = dir.path().join("unet");
    ok(&[
        "train",
        "--arch",
        "unet",
        "--f1",
        "8",
        "--iters",
        "6",
        "--data",
        s(&data),
        "--out",
        s(&unet),
    ]);

    let tr_csv = dir.path().join("tr.csv");
    let out = ok(&["eval", "--model", "none", "--data", s(&data), "--out", s(&tr_csv)]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert!(lines.next().unwrap().starts_with("TR,,,10,2,"));

    let tuned = dir.path().join("tuned");
    ok(&[
        "fine-tune",
        "--model",
        s(&fd_a),
        "--data",
        s(&data),
        "--split",
        "train",
        "--iters",
        "3",
        "--out",
        s(&tuned),
    ]);

    let report = dir.path().join("report");
    ok(&[
        "report",
        "--data",
        s(&data),
        "--unet",
        s(&unet),
        "--fd-unet",
        s(&tuned),
        "--panels",
        "2",
        "--out",
        s(&report),
    ]);
    let csv = fs::read_to_string(report.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], CSV_HEADER);
    assert_eq!(rows.len(), 4);
    for row in &rows[1..] {
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
    }
    assert!(report.join("panels/panel_01.pgm").exists());
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 5\nsize = 32\n").unwrap();
    ok(&[
        "phantom",
        "--config",
        s(&cfg),
        "--kind",
        "circles",
        "--out",
        s(dir.path()),
    ]);
    assert!(dir.path().join("circles_s5.ptns").exists());
    assert_eq!(
        Image2D::read_ptns(dir.path().join("circles_s5.ptns")).unwrap().size(),
        32
    );
    ok(&[
        "phantom",
        "--config",
        s(&cfg),
        "--seed",
        "6",
        "--kind",
        "circles",
        "--out",
        s(dir.path()),
    ]);
    assert!(dir.path().join("circles_s6.ptns").exists());
}

#[test]
fn unknown_experiment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsepat(&["experiment", "--name", "exp9", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}
