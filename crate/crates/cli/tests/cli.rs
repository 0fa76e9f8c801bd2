use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::process::{Command, Output};

use timebin_core::tagio;

const PULSES: &str = "50000000";

fn timebin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timebin"))
        .args(args)
        .env_remove("TIMEBIN_CONFIG_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = timebin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn simulate(dir: &Path) {
    ok(&[
        "simulate", "--scenario", "back_to_back", "--seed", "7", "--pulses", PULSES, "--out",
        dir.to_str().unwrap(),
    ]);
}

#[test]
fn simulate_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    simulate(&a);
    simulate(&b);
    for name in ["ch0.ttg", "ch1.ttg", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn unknown_scenario_exits_2_and_lists_presets() {
    let t = tempfile::tempdir().unwrap();
    let out = timebin(&["simulate", "--scenario", "nope", "--out", t.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("back_to_back") && err.contains("vienna_link"), "{err}");
}

#[test]
fn bad_config_key_is_named() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.toml");
    fs::write(&cfg, "preset = \"back_to_back\"\n[run]\nmu = -1.0\n").unwrap();
    let out = timebin(&["simulate", "--config", cfg.to_str().unwrap(), "--out", t.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.mu"));
}

#[test]
fn config_dir_resolves_scenario_files() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("mine.toml"), "preset = \"back_to_back\"\nname = \"mine\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_timebin"))
        .args(["simulate", "--scenario", "mine", "--pulses", "1000000", "--out"])
        .arg(t.path().join("o"))
        .env("TIMEBIN_CONFIG_DIR", t.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = fs::read_to_string(t.path().join("o/manifest.json")).unwrap();
    assert!(m.contains("\"mine\""));
}

#[test]
fn truncated_ttg1_reports_offset() {
    let t = tempfile::tempdir().unwrap();
    simulate(t.path());
    let bytes = fs::read(t.path().join("ch0.ttg")).unwrap();
    let cut = t.path().join("cut.ttg");
    fs::write(&cut, &bytes[..13 + 9 * 4 + 5]).unwrap();
    let out = timebin(&["analyze", cut.to_str().unwrap(), "--out", t.path().join("x").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("offset 49"), "{err}");
}

#[test]
fn analyze_of_simulate_matches_report() {
    let t = tempfile::tempdir().unwrap();
    let sim = t.path().join("sim");
    simulate(&sim);
    let (an, rp) = (t.path().join("an"), t.path().join("rp"));
    ok(&[
        "analyze",
        sim.join("ch0.ttg").to_str().unwrap(),
        sim.join("ch1.ttg").to_str().unwrap(),
        "--format", "json", "--out", an.to_str().unwrap(),
    ]);
    ok(&[
        "report", "--scenario", "back_to_back", "--seed", "7", "--pulses", PULSES, "--format",
        "json", "--out", rp.to_str().unwrap(),
    ]);
    for name in ["analysis.json", "histogram.csv"] {
        assert_eq!(fs::read(an.join(name)).unwrap(), fs::read(rp.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn csv_and_ttg1_give_same_analysis() {
    let t = tempfile::tempdir().unwrap();
    let sim = t.path().join("sim");
    simulate(&sim);
    let a = tagio::load(&sim.join("ch0.ttg"), 1.0).unwrap();
    let b = tagio::load(&sim.join("ch1.ttg"), 1.0).unwrap();
    let merged = tagio::merge_channels(&[a.tags, b.tags]);
    let csv = t.path().join("tags.csv");
    tagio::write_csv(BufWriter::new(File::create(&csv).unwrap()), &merged).unwrap();

    let common = ["--scenario", "back_to_back", "--duration-s", "0.05", "--format", "json"];
    let (x, y) = (t.path().join("x"), t.path().join("y"));
    let mut args = vec!["analyze", csv.to_str().unwrap(), "--out", x.to_str().unwrap()];
    args.extend(common);
    ok(&args);
    let (c0, c1) = (sim.join("ch0.ttg"), sim.join("ch1.ttg"));
    let mut args = vec![
        "analyze",
        c0.to_str().unwrap(),
        c1.to_str().unwrap(),
        "--out",
        y.to_str().unwrap(),
    ];
    args.extend(common);
    ok(&args);
    for name in ["analysis.json", "histogram.csv"] {
        assert_eq!(fs::read(x.join(name)).unwrap(), fs::read(y.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn vienna_manifest_loss_budget() {
    let t = tempfile::tempdir().unwrap();
    ok(&["simulate", "--scenario", "vienna_link", "--pulses", "1000000", "--out", t.path().to_str().unwrap()]);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("manifest.json")).unwrap()).unwrap();
    let loss = |name: &str| {
        m["loss_budget"]["components"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["component"] == name)
            .and_then(|c| c["loss_db"].as_f64())
            .unwrap()
    };
    assert_eq!(loss("link"), 9.5);
    assert_eq!(loss("dcm"), 2.9);
    assert!((loss("beam_splitter") - 3.0).abs() < 0.02);
}

#[test]
fn sweep_phase_writes_fringe_files() {
    let t = tempfile::tempdir().unwrap();
    ok(&[
        "sweep-phase", "--scenario", "back_to_back", "--points", "8", "--point-pulses", "200000000",
        "--out", t.path().to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(t.path().join("fringe.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    let j: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("fringe.json")).unwrap()).unwrap();
    let v = j["raw_visibility"].as_f64().unwrap();
    assert!(v > 0.8, "visibility {v}");
}

#[test]
fn oracle_check_passes() {
    let t = tempfile::tempdir().unwrap();
    ok(&["oracle-check", "--samples", "200000", "--format", "json", "--out", t.path().to_str().unwrap()]);
    let j: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(t.path().join("oracle.json")).unwrap()).unwrap();
    assert_eq!(j["passed"], true);
}

#[test]
fn two_receiver_report_writes_keys() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("qkd.toml");
    fs::write(&cfg, "preset = \"back_to_back\"\ntopology = \"two_receiver\"\n").unwrap();
    ok(&["report", "--config", cfg.to_str().unwrap(), "--pulses", "100000000", "--out", t.path().to_str().unwrap()]);
    for name in ["alice_time.bits", "bob_phase.bits", "qkd.csv"] {
        assert!(t.path().join(name).exists(), "{name}");
    }
}
