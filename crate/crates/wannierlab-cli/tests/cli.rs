use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wannierlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("WANNIERLAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn error_json(o: &Output) -> Value {
    assert!(!o.status.success());
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap()
}

#[test]
fn ssh_wannier_csv_decays_to_the_box_edge() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["wannier1d", "--preset", "ssh", "--v", "1", "--w", "2", "--band", "lower", "--grid", "256"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("wannier.csv")).unwrap();
    let mut by_cell = std::collections::BTreeMap::<i64, f64>::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (re, im): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
        *by_cell.entry(f[1].parse().unwrap()).or_default() += re * re + im * im;
    }
    let peak = by_cell.values().cloned().fold(0.0, f64::max).sqrt();
    for g in [-20, 20] {
        assert!(by_cell[&g].sqrt() < 1e-6 * peak, "cell {g}");
    }
    let rep = json(&dir.path().join("decay.json"));
    assert!(rep["decay"]["bands"][0]["alpha"].as_f64().unwrap() > 0.0);
    assert_eq!(rep["frame_residuals"]["tolerance"].as_f64(), Some(1e-6));
    let frame = std::fs::read_to_string(dir.path().join("frame.csv")).unwrap();
    assert_eq!(frame.lines().next(), Some("1,2,1,257"));
    assert_eq!(frame.lines().count(), 258);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["wannier2d", "--preset", "trs4", "--grid", "32", "--box", "8"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    for f in ["frame.csv", "wannier.csv", "decay.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(json(&a.path().join("decay.json"))["extra"]["chern"]["chern"], 0);
}

#[test]
fn haldane_diagnose_reports_unit_chern() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["diagnose", "--preset", "haldane-topological"], dir.path()).status.success());
    let t = json(&dir.path().join("topology.json"));
    assert_eq!(t["chern"]["chern"].as_i64().unwrap().abs(), 1);
    assert_eq!(t["det_winding"].as_i64().unwrap().abs(), 1);
}

#[test]
fn haldane_wannier2d_stops_at_cs_check() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_json(&run(&["wannier2d", "--preset", "haldane-topological"], dir.path()));
    assert_eq!(e["stage"], "cs-check");
    assert_eq!(e["chern_report"]["chern"].as_i64().unwrap().abs(), 1);
    assert!(!dir.path().join("frame.csv").exists());
}

#[test]
fn input_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_json(&run(&["wannier1d", "--preset", "ssh", "--grid", "100"], dir.path()));
    assert_eq!(e["stage"], "model");
    let e = error_json(&run(&["wannier1d", "--preset", "ssh", "--tol", "gap=-1"], dir.path()));
    assert_eq!(e["stage"], "model");
    let e = error_json(&run(&["wannier1d", "--preset", "nope"], dir.path()));
    assert!(e["error"].as_str().unwrap().contains("unknown preset"));
}

#[test]
fn gap_closure_names_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_json(&run(&["wannier1d", "--preset", "ssh", "--v", "1", "--w", "1", "--grid", "16"], dir.path()));
    assert_eq!(e["stage"], "spectral");
    // v = w closes the gap at the zone boundary.
    assert_eq!(e["node"][0].as_f64().unwrap().abs(), 0.5);
}

#[test]
fn model_file_matches_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ssh.json");
    std::fs::write(&path, wannierlab::presets::ssh(1.0, 2.0).to_json()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&["wannier1d", "--model", path.to_str().unwrap()], &a).status.success());
    assert!(run(&["wannier1d", "--preset", "ssh"], &b).status.success());
    assert_eq!(std::fs::read(a.join("wannier.csv")).unwrap(), std::fs::read(b.join("wannier.csv")).unwrap());
}

#[test]
fn magnetic_sweep_on_small_patch() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["magnetic", "--preset", "ssh-stack", "--box", "6", "--b", "0.001,0.004", "--tol", "mag_trunc=1e-3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&dir.path().join("sweep.json"));
    assert!((s["slope_closeness"].as_f64().unwrap() - 1.0).abs() < 0.15);
    assert!((s["slope_pi_minus_p"].as_f64().unwrap() - 1.0).abs() < 0.15);
    for f in ["basis_b0.csv", "basis_b0.001.csv", "basis_b0.004.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().next(), Some("j,gamma1,gamma2,x,y,re,im"));
        assert_eq!(text.lines().count(), 1 + 144 * 2);
    }
}
