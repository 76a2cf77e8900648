use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn afcmux(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afcmux"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AFCMUX_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok_json(out: Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for (name, seed) in [("a.bin", "7"), ("b.bin", "7"), ("c.bin", "8")] {
        ok_json(afcmux(
            &[
                "simulate",
                "--duration-s",
                "0.05",
                "--seed",
                seed,
                "--format",
                "bin",
                "--out",
                name,
            ],
            dir.path(),
        ));
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert!(!read("a.bin").is_empty());
    assert_eq!(read("a.bin"), read("b.bin"));
    assert_ne!(read("a.bin"), read("c.bin"));
}

#[test]
fn default_preset_simulate_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let prov = ok_json(afcmux(
        &["simulate", "--duration-s", "0.5", "--out", "ev.csv"],
        dir.path(),
    ));
    assert_eq!(prov["scenario"], "default");
    assert_eq!(prov["seed"], 1);
    assert_eq!(prov["duration_ps"], 500_000_000_000i64);
    assert!(dir.path().join("ev.csv.provenance.json").exists());

    let report = ok_json(afcmux(&["analyze", "ev.csv", "--out", "rep"], dir.path()));
    assert_eq!(report["status"], "ok");
    assert_eq!(report["duration_source"], "provenance");
    assert_eq!(report["inputs"][0]["sha256"], prov["events_sha256"]);
    for f in [
        "histogram.csv",
        "echo_histogram.csv",
        "beat_spectrum.csv",
        "estimates.csv",
        "report.json",
    ] {
        assert!(dir.path().join("rep").join(f).exists(), "{f}");
    }
    let echo = report["g2_echo"]["result"]["value"].as_f64().unwrap();
    assert!(echo > 1.5, "echo g2 {echo}");
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("outputs");
    std::fs::create_dir(&target).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_afcmux"))
        .args(["simulate", "--duration-s", "0.01", "--format", "json"])
        .current_dir(dir.path())
        .env("AFCMUX_OUT_DIR", &target)
        .output()
        .unwrap();
    ok_json(out);
    assert!(target.join("events.json").exists());
}

#[test]
fn zero_duration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = afcmux(&["simulate", "--duration-s", "0"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("duration_s"), "{}", stderr(&out));

    let mut file: Value =
        serde_json::from_str(&String::from_utf8(afcmux_validate_dump(dir.path())).unwrap())
            .unwrap();
    file["config"]["duration_s"] = 0.0.into();
    std::fs::write(dir.path().join("zero.json"), file.to_string()).unwrap();
    let out = afcmux(&["validate", "--scenario", "zero.json"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("duration_s"));
}

fn afcmux_validate_dump(dir: &Path) -> Vec<u8> {
    let out = afcmux(&["validate", "--preset", "default", "--out", "s.json"], dir);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: default"));
    std::fs::read(dir.join("s.json")).unwrap()
}

#[test]
fn malformed_scenario_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        "{\n  \"version\": 1,\n  \"nme\": 3\n}",
    )
    .unwrap();
    let out = afcmux(&["validate", "--scenario", "bad.json"], dir.path());
    assert!(!out.status.success());
    let msg = stderr(&out);
    assert!(msg.contains("bad.json") && msg.contains("line 3"), "{msg}");
}

#[test]
fn unknown_recipe_and_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = afcmux(&["figure", "fig9"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("fig4ab"));
    let out = afcmux(&["simulate", "--preset", "nope"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("noise-off"));
}

#[test]
fn empty_file_gives_no_data_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    std::fs::write(dir.path().join("header.csv"), "channel,timestamp_ps\n").unwrap();
    for f in ["empty.csv", "header.csv"] {
        let report = ok_json(afcmux(&["analyze", f, "--out", "rep"], dir.path()));
        assert_eq!(report["status"], "no_data", "{f}");
        assert!(dir.path().join("rep/report.json").exists());
    }
}

#[test]
fn corrupt_file_names_record() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.csv"),
        "channel,timestamp_ps\n0,10\n1,x\n",
    )
    .unwrap();
    let out = afcmux(&["analyze", "bad.csv"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("record 1"), "{}", stderr(&out));
}

#[test]
fn tiny_file_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    // idlers at 1 us and 10 us; one signal 500 ps after the first, one 3.5 us after the second
    let csv = "channel,timestamp_ps\n0,1000000\n1,1000500\n0,10000000\n2,13500000\n";
    std::fs::write(dir.path().join("tiny.csv"), csv).unwrap();
    let r = ok_json(afcmux(&["analyze", "tiny.csv", "--out", "rep"], dir.path()));
    assert_eq!(r["duration_source"], "last_event");
    let t = 13_500_001.0;
    let acc = 2.0 * 2.0 * 400_000.0 / t;
    for key in ["g2_input", "g2_echo"] {
        let g = &r[key]["result"];
        assert_eq!(g["n_c"], 1, "{key}");
        assert_eq!(g["n_a"], 2);
        assert_eq!(g["n_b"], 2);
        let a = g["accidentals"].as_f64().unwrap();
        assert!((a - acc).abs() < 1e-12 * acc, "{a} vs {acc}");
        assert!((g["value"].as_f64().unwrap() - 1.0 / acc).abs() < 1e-9 / acc);
    }
    let hist = std::fs::read_to_string(dir.path().join("rep/histogram.csv")).unwrap();
    let total: f64 = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert_eq!(total, 2.0);
}

#[test]
fn scan_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let prov = ok_json(afcmux(
        &[
            "scan",
            "--preset",
            "source",
            "--duration-s",
            "2",
            "--format",
            "bin",
            "--out",
            "scan.bin",
        ],
        dir.path(),
    ));
    assert!(prov["scan"].is_object());
    let r = ok_json(afcmux(&["fit", "scan.bin", "--out", "fit"], dir.path()));
    assert_eq!(r["status"], "ok");
    let spacing = r["spacing_hz"].as_f64().unwrap();
    assert!((spacing - 261.1e6).abs() < 5e6, "spacing {spacing}");
    assert!(dir.path().join("fit/fit.json").exists());
}

#[test]
fn figure_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok_json(afcmux(&["figure", "appH", "--out", "h"], dir.path()));
    assert_eq!(r["recipe"], "appH");
    for f in r["files"].as_array().unwrap() {
        assert!(dir.path().join(f.as_str().unwrap()).exists(), "{f}");
    }
    assert!(dir.path().join("h/summary.json").exists());
}
