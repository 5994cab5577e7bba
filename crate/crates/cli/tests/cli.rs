//! CLI behavior: exit codes, schema diagnostics, output formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_immse"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("immse-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn init_scenario(name: &str, dir: &Path) -> PathBuf {
    let out = bin()
        .args(["scenario-init", name, "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir.join(format!("{name}.json"))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn scenario_init_unknown_name_lists_valid_ones() {
    let dir = tmpdir("unknown");
    let out = bin()
        .args(["scenario-init", "k9-foo", "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(
        msg.contains("k1-bpsk") && msg.contains("k2-gaussian-mimo2"),
        "{msg}"
    );
}

#[test]
fn sweep_writes_csv_with_documented_columns() {
    let dir = tmpdir("columns");
    let scen = init_scenario("k2-bpsk", &dir);
    let out = bin()
        .args([
            "sweep",
            scen.to_str().unwrap(),
            "--samples",
            "2000",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "snr,I_joint,I_joint_se,mmse_total,psi,dIdsnr_fd,dIdsnr_fd_se,residual_thm1,pass,\
         mmse_1,I_cond_1,I_marg_1,gap_1,mmse_2,I_cond_2,I_marg_2,gap_2"
    );
    assert_eq!(csv.lines().count(), 17); // header + 16 grid points
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("sweep.json")).unwrap()).unwrap();
    assert!(json["manifest"]["scenario_digest"].as_str().unwrap().len() == 64);
    assert_eq!(json["points"].as_array().unwrap().len(), 16);
    // full matrices present in the JSON mirror
    assert!(json["points"][0]["error_matrices"].is_array());
}

#[test]
fn bits_flag_rescales_information_columns() {
    let dir = tmpdir("bits");
    let scen = init_scenario("k1-bpsk", &dir);
    let nats_dir = dir.join("nats");
    let bits_dir = dir.join("bits");
    for (flag, out_dir) in [(false, &nats_dir), (true, &bits_dir)] {
        let mut cmd = bin();
        cmd.args(["sweep", scen.to_str().unwrap(), "--samples", "2000"]);
        if flag {
            cmd.arg("--bits");
        }
        cmd.args(["--out", out_dir.to_str().unwrap()]);
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let field = |dir: &Path, col: usize| -> f64 {
        let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
        csv.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(col)
            .unwrap()
            .parse()
            .unwrap()
    };
    let ratio = field(&nats_dir, 1) / field(&bits_dir, 1);
    assert!(
        (ratio - std::f64::consts::LN_2).abs() < 1e-12,
        "I_joint must convert to bits"
    );
    // mmse stays in natural units
    assert_eq!(field(&nats_dir, 3), field(&bits_dir, 3));
}

#[test]
fn schema_error_names_the_json_path() {
    let dir = tmpdir("schema");
    // user 1 precoder is 2x2 against a 1-column channel
    let text = r#"{
        "n_r": 1,
        "users": [
            {"channel": [[[1.0, 0.0]]], "precoder": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]],
             "input": {"type": "constellation", "name": "bpsk"}}
        ],
        "snr_grid": [1.0],
        "samples": 100,
        "seed": 1,
        "fd_step_rel": 0.001
    }"#;
    let path = dir.join("bad.json");
    fs::write(&path, text).unwrap();
    let out = bin()
        .args(["sweep", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("users[0]"), "{}", stderr(&out));
}

#[test]
fn malformed_json_reports_location() {
    let dir = tmpdir("malformed");
    let path = dir.join("broken.json");
    fs::write(&path, "{\"n_r\": 1,").unwrap();
    let out = bin()
        .args(["sweep", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line"), "{}", stderr(&out));
}

#[test]
fn enumeration_cap_exits_three() {
    let dir = tmpdir("cap");
    let scen = init_scenario("k2-bpsk", &dir);
    let mut json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&scen).unwrap()).unwrap();
    json["tolerances"]["enum_cap"] = serde_json::json!(2.0);
    fs::write(&scen, serde_json::to_string(&json).unwrap()).unwrap();
    let out = bin()
        .args([
            "sweep",
            scen.to_str().unwrap(),
            "--samples",
            "100",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("enumeration cap"), "{}", stderr(&out));
}

#[test]
fn tampered_zero_tolerance_fails_verification_with_exit_four() {
    let dir = tmpdir("tamper");
    let scen = init_scenario("k1-bpsk", &dir);
    let mut json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&scen).unwrap()).unwrap();
    json["tolerances"]["abs_tol"] = serde_json::json!(0.0);
    json["tolerances"]["z_tol"] = serde_json::json!(0.0);
    json["snr_grid"] = serde_json::json!([1.0]);
    fs::write(&scen, serde_json::to_string(&json).unwrap()).unwrap();
    let out = bin()
        .args([
            "verify",
            scen.to_str().unwrap(),
            "--samples",
            "2000",
            "--strict",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn mixed_input_laws_are_rejected_with_exit_two() {
    let dir = tmpdir("mixed");
    let text = r#"{
        "n_r": 1,
        "users": [
            {"channel": [[[1.0, 0.0]]], "precoder": [[[1.0, 0.0]]], "input": {"type": "constellation", "name": "bpsk"}},
            {"channel": [[[0.8, 0.0]]], "precoder": [[[1.0, 0.0]]], "input": {"type": "gaussian"}}
        ],
        "snr_grid": [1.0],
        "samples": 100,
        "seed": 1,
        "fd_step_rel": 0.001
    }"#;
    let path = dir.join("mixed.json");
    fs::write(&path, text).unwrap();
    let out = bin()
        .args([
            "sweep",
            path.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("mixed input laws unsupported"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn single_user_scenario_verifies_clean() {
    // the no-interference regime: every identity line must pass
    let dir = tmpdir("k1-verify");
    let scen = init_scenario("k1-bpsk", &dir);
    let out = bin()
        .args([
            "verify",
            scen.to_str().unwrap(),
            "--samples",
            "20000",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("derivative_identity"));
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn gaussian_scenario_verifies_clean() {
    let dir = tmpdir("gaussian");
    let scen = init_scenario("k2-gaussian-mimo2", &dir);
    let out = bin()
        .args([
            "verify",
            scen.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gauss_telescoping"));
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn normalize_flag_repairs_custom_constellations() {
    let dir = tmpdir("normalize");
    let text = r#"{
        "n_r": 1,
        "users": [
            {"channel": [[[1.0, 0.0]]], "precoder": [[[1.0, 0.0]]],
             "input": {"type": "constellation", "points": [[[3.0, 0.0]], [[1.0, 0.0]]], "probs": [0.5, 0.5]}}
        ],
        "snr_grid": [0.5, 1.0],
        "samples": 500,
        "seed": 1,
        "fd_step_rel": 0.001
    }"#;
    let path = dir.join("custom.json");
    fs::write(&path, text).unwrap();
    let rejected = bin()
        .args([
            "sweep",
            path.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(rejected.status.code(), Some(2));
    assert!(
        stderr(&rejected).contains("users[0].input"),
        "{}",
        stderr(&rejected)
    );
    let repaired = bin()
        .args([
            "sweep",
            path.to_str().unwrap(),
            "--normalize",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(repaired.status.code(), Some(0), "{}", stderr(&repaired));
}
