use std::path::Path;
use std::process::{Command, Output};

use gridlock::cli::{GainArtifact, Scenario};

fn gridlock(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridlock"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn gain_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("gain-"))
        .collect();
    v.sort();
    v
}

#[test]
fn build_preset_reports_dimensions() {
    let out = gridlock(&["build", "kundur2area"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("n=15, m=2"));
    assert!(stdout(&out).contains("open-loop stable"));
}

#[test]
fn build_missing_file_is_a_validation_error() {
    let out = gridlock(&["build", "/nonexistent/grid.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("file not found"));
}

#[test]
fn build_disconnected_grid_names_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let grid = r#"{
        "buses": [{"index": 0, "kind": "GeneratorBus"}, {"index": 1, "kind": "LoadBus"}],
        "lines": [],
        "generators": {"0": {"inertia": 1.0, "damping": 0.1, "kp": 0.0, "ki": 0.0}},
        "loads": {"1": {"frequency_sensitivity": 0.1, "fixed_load_mw": 10.0}},
        "system_base_mva": 100.0,
        "nominal_frequency_hz": 60.0
    }"#;
    let path = write_scenario(dir.path(), "grid.json", grid);
    let out = gridlock(&["build", &path]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("DisconnectedGraph"), "{}", stderr(&out));
}

#[test]
fn design_writes_content_addressed_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_string_lossy().into_owned();
    let out = gridlock(&["design", "--out", &out_dir]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("verification: PASS"));
    let files = gain_files(dir.path());
    assert_eq!(files.len(), 1);
    let name = files[0].file_name().unwrap().to_string_lossy().into_owned();
    assert_eq!(name.len(), "gain-".len() + 16 + ".json".len());
    let art = GainArtifact::load(&files[0]).unwrap();
    assert!(name.contains(&art.hash));
    assert!(art.dominant_modes.iter().all(|z| z.re > 0.0));

    let out = gridlock(&["design", "--out", &out_dir, "--seed", "42"]);
    assert_eq!(code(&out), 0);
    assert_eq!(gain_files(dir.path()).len(), 2, "a new seed is a new address");
}

#[test]
fn stabilising_region_places_movable_modes_in_strip() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(
        dir.path(),
        "s.json",
        r#"{"region": [{"strip": {"alpha": 0.5, "beta": 2.0}}]}"#,
    );
    let out = gridlock(&["design", "--scenario", &s, "--out", &dir.path().to_string_lossy()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let art = GainArtifact::load(&gain_files(dir.path())[0]).unwrap();
    let report = art.verification.unwrap();
    assert!(report.placed().all(|z| z.re > -2.0 && z.re < -0.5));
}

#[test]
fn tiny_disk_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "s.json", r#"{"region": [{"disk": {"q": 0.0, "r": 1e-6}}]}"#);
    let out = gridlock(&["design", "--scenario", &s, "--out", &dir.path().to_string_lossy()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(gain_files(dir.path()).is_empty());
}

#[test]
fn duration_before_attack_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(
        dir.path(),
        "s.json",
        r#"{"sim": {"duration": 3.0, "attack_start": 5.0}}"#,
    );
    let out = gridlock(&["simulate", "--scenario", &s, "--out", &dir.path().to_string_lossy()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn design_then_simulate_is_reproducible() {
    let body = r#"{"sim": {"duration": 12.0, "seed": 5}}"#;
    let mut traces = Vec::new();
    let mut gains = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let s = write_scenario(dir.path(), "s.json", body);
        let out_dir = dir.path().join("out").to_string_lossy().into_owned();
        assert_eq!(code(&gridlock(&["design", "--scenario", &s, "--out", &out_dir])), 0);
        let out = gridlock(&["simulate", "--scenario", &s, "--out", &out_dir]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stdout(&out).contains("reused"));
        let out_path = Path::new(&out_dir);
        traces.push(std::fs::read(out_path.join("trace.csv")).unwrap());
        gains.push(std::fs::read(&gain_files(out_path)[0]).unwrap());
        for f in ["thresholds.csv", "inputs.svg", "frequency.svg", "report.json"] {
            assert!(out_path.join(f).exists(), "{f} missing");
        }
        let header = String::from_utf8_lossy(&traces.last().unwrap()[..400]).into_owned();
        assert!(header.starts_with("t,state_0,"));
        assert!(header.contains(",state_14,u_0,u_1,f_gen_0,f_gen_1,f_gen_2,f_gen_3\n"));
    }
    assert_eq!(traces[0], traces[1]);
    assert_eq!(gains[0], gains[1]);
}

#[test]
fn zero_gain_artifact_stays_at_nominal() {
    let dir = tempfile::tempdir().unwrap();
    let k = vec![vec![0.0; 15]; 2];
    let art = serde_json::json!({ "k": k });
    let gain = dir.path().join("zero.json");
    std::fs::write(&gain, art.to_string()).unwrap();
    let s = write_scenario(dir.path(), "s.json", r#"{"sim": {"duration": 10.0}}"#);
    let out = gridlock(&[
        "simulate",
        "--scenario",
        &s,
        "--out",
        &dir.path().to_string_lossy(),
        "--gain",
        &gain.to_string_lossy(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("thresholds.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "kundur,100.0,,");
    let mut reader = csv::Reader::from_path(dir.path().join("trace.csv")).unwrap();
    for row in reader.records() {
        let row = row.unwrap();
        for j in 0..4 {
            let f: f64 = row[row.len() - 4 + j].parse().unwrap();
            assert!((f - 60.0).abs() < 1e-3);
        }
        assert_eq!(&row[16], "0");
    }
}

#[test]
fn wrong_sized_gain_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let gain = dir.path().join("bad.json");
    std::fs::write(&gain, r#"{"k": [[1.0, 2.0]]}"#).unwrap();
    let out = gridlock(&[
        "simulate",
        "--out",
        &dir.path().to_string_lossy(),
        "--gain",
        &gain.to_string_lossy(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn overflow_exits_with_blow_up_time() {
    let dir = tempfile::tempdir().unwrap();
    let prep = Scenario::default().prepare().unwrap();
    let bt = prep.model.b.transpose();
    let k: Vec<Vec<f64>> = bt.row_iter().map(|r| r.iter().copied().collect()).collect();
    let gain = dir.path().join("wild.json");
    std::fs::write(&gain, serde_json::json!({ "k": k }).to_string()).unwrap();
    let s = write_scenario(dir.path(), "s.json", r#"{"sim": {"cap_mw": null, "duration": 8.0}}"#);
    let out = gridlock(&[
        "simulate",
        "--scenario",
        &s,
        "--out",
        &dir.path().to_string_lossy(),
        "--gain",
        &gain.to_string_lossy(),
    ]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stderr(&out).contains("NonFiniteState"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let t = report["time"].as_f64().unwrap();
    assert!((5.0..8.0).contains(&t), "blow-up at {t}");
}

#[test]
fn sweep_rows_follow_configuration_order() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(
        dir.path(),
        "s.json",
        r#"{"caps_mw": [200.0, 50.0], "sim": {"duration": 8.0}, "perturbation": {"relative_error": 0.1, "seed": 7}}"#,
    );
    let out_dir = dir.path().join("out");
    let out = gridlock(&["sweep", "--scenario", &s, "--out", &out_dir.to_string_lossy()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scenario,cap_mw,t_2_5pct,t_5pct");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("kundur,200.0,"));
    assert!(lines[2].starts_with("kundur,50.0,"));
    assert!(lines[3].starts_with("kundur+10%error,100.0,"));
    let table = std::fs::read_to_string(out_dir.join("sweep.txt")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert_eq!(gain_files(&out_dir).len(), 2);

    let again = gridlock(&["sweep", "--scenario", &s, "--out", &out_dir.to_string_lossy()]);
    assert_eq!(code(&again), 0);
    assert!(stdout(&again).contains("reused"));
    assert_eq!(std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap(), csv);
}

#[test]
fn empty_cap_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "s.json", r#"{"caps_mw": []}"#);
    let out = gridlock(&["sweep", "--scenario", &s, "--out", &dir.path().to_string_lossy()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn relative_outputs_resolve_next_to_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), "s.json", r#"{"outputs": "results"}"#);
    let out = gridlock(&["design", "--scenario", &s]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(gain_files(&dir.path().join("results")).len(), 1);
}
