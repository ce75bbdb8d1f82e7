//! End-to-end checks of the command-line surface and its exit-code
//! contract, driving the built binary on small configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_coaglab")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("coaglab_cli_{}_{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn code(output: &Output) -> i32 {
    output.status.code().unwrap_or(-1)
}

fn base_config(n_max: u32, t_end: f64) -> String {
    format!(
        r#"{{
  "version": 1,
  "d": 2,
  "n_max": {n_max},
  "kernel": {{"family": "constant", "value": 1.0, "gamma": 0.0, "p": 0.0, "c1": 1.0, "c2": 1.0}},
  "initial": {{"type": "monomer_mix", "weights": [0.7, 0.3]}},
  "solver": {{"t_end": {t_end}, "rel_tol": 1e-7}},
  "diagnostics": {{"csv_mirrors": true}}
}}"#
    )
}

#[test]
fn run_produces_selfdescribing_directory() {
    let dir = scratch("run_ok");
    let cfg = write_config(&dir, "run.json", &base_config(128, 5.0));
    let out_dir = dir.join("traj");
    let output = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("diagnostics.jsonl").exists());
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("dispersion.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert!(manifest["snapshots"].as_array().unwrap().len() > 30);
    assert!(manifest["report"]["max_rel_mass_defect"].as_f64().unwrap() < 1e-8);
}

#[test]
fn gelling_config_exits_2_citing_the_constraint() {
    let dir = scratch("gel");
    let cfg_body = base_config(64, 1.0).replace("\"gamma\": 0.0", "\"gamma\": 1.0");
    let cfg = write_config(&dir, "gel.json", &cfg_body);
    let output = run_cli(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&output), 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("no-gelation") && stderr.contains("gamma < 1"),
        "stderr should cite the constraint: {stderr}"
    );
}

#[test]
fn under_resolved_truncation_exits_3() {
    let dir = scratch("escape");
    let cfg = write_config(&dir, "tiny.json", &base_config(8, 1000.0));
    let out_dir = dir.join("traj");
    let output = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 3, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "aborted_escape_threshold");
}

#[test]
fn run_is_byte_reproducible() {
    let dir = scratch("repro");
    let cfg = write_config(&dir, "run.json", &base_config(96, 3.0));
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let output = run_cli(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&output), 0);
    }
    for entry in fs::read_dir(&out_a).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(out_a.join(&name)).unwrap();
        let b = fs::read(out_b.join(&name)).unwrap();
        assert_eq!(a, b, "file {name:?} differs between identical runs");
    }
}

#[test]
fn diagnose_recomputes_identical_summary_and_detects_corruption() {
    let dir = scratch("diag");
    let cfg = write_config(&dir, "run.json", &base_config(96, 3.0));
    let out_dir = dir.join("traj");
    assert_eq!(
        code(&run_cli(["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()].as_ref())),
        0
    );
    let summary_first = fs::read(out_dir.join("summary.json")).unwrap();
    let output = run_cli(&["diagnose", out_dir.to_str().unwrap()]);
    assert_eq!(code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let summary_second = fs::read(out_dir.join("summary.json")).unwrap();
    assert_eq!(summary_first, summary_second);

    // Any corrupt snapshot must abort with exit 4 and name the file.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let victim = manifest["snapshots"][3]["csv"].as_str().unwrap().to_string();
    let victim_path = out_dir.join(&victim);
    let mut body = fs::read_to_string(&victim_path).unwrap();
    body.push_str("1,1,0.5\n");
    fs::write(&victim_path, body).unwrap();
    let output = run_cli(&["diagnose", out_dir.to_str().unwrap()]);
    assert_eq!(code(&output), 4);
    assert!(String::from_utf8_lossy(&output.stderr).contains(&victim));
}

#[test]
fn diagnose_missing_manifest_exits_4() {
    let dir = scratch("nomanifest");
    let output = run_cli(&["diagnose", dir.to_str().unwrap()]);
    assert_eq!(code(&output), 4);
}

#[test]
fn ssa_is_deterministic_and_writes_ensemble() {
    let dir = scratch("ssa");
    let cfg_body = format!(
        r#"{{
  "version": 1,
  "d": 2,
  "n_max": 64,
  "kernel": {{"family": "constant", "value": 1.0, "gamma": 0.0, "p": 0.0, "c1": 1.0, "c2": 1.0}},
  "initial": {{"type": "monomer_mix", "weights": [0.7, 0.3]}},
  "solver": {{"t_end": 1.0}},
  "ssa": {{"n_particles": 400, "volume": 400.0, "seeds": [1, 2, 3], "record_times": [0.5, 1.0]}}
}}"#
    );
    let cfg = write_config(&dir, "ssa.json", &cfg_body);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let output = run_cli(&[
            "ssa",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    }
    assert!(out_a.join("seed_0001/rec_001.csv").exists());
    assert!(out_a.join("ensemble/mean_000.csv").exists());
    assert!(out_a.join("ensemble/stderr_001.csv").exists());
    let ma = fs::read(out_a.join("ensemble_manifest.json")).unwrap();
    let mb = fs::read(out_b.join("ensemble_manifest.json")).unwrap();
    assert_eq!(ma, mb);
    let ca = fs::read(out_a.join("seed_0002/rec_000.csv")).unwrap();
    let cb = fs::read(out_b.join("seed_0002/rec_000.csv")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn validate_kernel_exit_codes() {
    let dir = scratch("valkernel");
    // Well-declared constant kernel passes.
    let ok = write_config(&dir, "ok.json", &base_config(64, 1.0));
    assert_eq!(code(&run_cli(&["validate-kernel", "--config", ok.to_str().unwrap()])), 0);

    // Product kernel mislabeled with homogeneity 1 fails the bound check.
    let mislabeled = r#"{
  "version": 1,
  "d": 2,
  "n_max": 64,
  "kernel": {"family": "product", "gamma": 1.0, "p": -0.5, "c1": 1.0, "c2": 1.0},
  "initial": {"type": "monomer_mix", "weights": [0.5, 0.5]},
  "solver": {"t_end": 1.0}
}"#;
    let bad = write_config(&dir, "bad.json", mislabeled);
    let output = run_cli(&["validate-kernel", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&output), 6, "stderr: {}", String::from_utf8_lossy(&output.stderr));

    // Ray-constant kernel whose Q dips to zero on the grid fails too.
    let dipping = r#"{
  "version": 1,
  "d": 2,
  "n_max": 64,
  "kernel": {"family": "ray_constant", "gamma": 0.0, "p": 0.0, "c1": 0.5, "c2": 2.0,
             "q0": 0.0, "qlin": [1.0, 0.0]},
  "initial": {"type": "monomer_mix", "weights": [0.5, 0.5]},
  "solver": {"t_end": 1.0}
}"#;
    let dip = write_config(&dir, "dip.json", dipping);
    let output = run_cli(&["validate-kernel", "--config", dip.to_str().unwrap()]);
    assert_eq!(code(&output), 6);

    // Unreadable config is a configuration error, not a validation failure.
    let output = run_cli(&["validate-kernel", "--config", dir.join("absent.json").to_str().unwrap()]);
    assert_eq!(code(&output), 2);
}

#[test]
fn compare_profile_on_early_trajectory_exits_5() {
    let dir = scratch("earlyprofile");
    let cfg = write_config(&dir, "run.json", &base_config(96, 3.0));
    let out_dir = dir.join("traj");
    assert_eq!(
        code(&run_cli(["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()].as_ref())),
        0
    );
    let output = run_cli(&["compare-profile", out_dir.to_str().unwrap()]);
    assert_eq!(code(&output), 5, "stderr: {}", String::from_utf8_lossy(&output.stderr));
}
