use std::fs;
use std::process::Command;

use helmstab::io::{read_dn, read_field};

fn helmstab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_helmstab"))
}

#[test]
fn check_dn_writes_outputs_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = helmstab().args(["check-dn", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let map = read_dn(fs::File::open(dir.path().join("dn_constant.bin")).unwrap()).unwrap();
    assert_eq!(map.k, 2.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "check-dn");
    assert!(dir.path().join("dn_check.csv").exists());
}

#[test]
fn coarse_dn_check_fails_its_gate() {
    let dir = tempfile::tempdir().unwrap();
    let out = helmstab()
        .args(["check-dn", "--points-per-axis", "17", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL dn_oracle"));
}

#[test]
fn reconstruct_round_trips_through_the_binary_format() {
    let dir = tempfile::tempdir().unwrap();
    let status = helmstab()
        .args([
            "reconstruct",
            "--points-per-axis",
            "33",
            "--modes-per-face",
            "31",
            "--k",
            "4",
            "--noise",
            "0",
            "--out",
        ])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.code() == Some(0) || status.code() == Some(1));
    let field = read_field(fs::File::open(dir.path().join("reconstruction.bin")).unwrap()).unwrap();
    assert_eq!(field.grid().points_per_axis(), 33);
    let stability = fs::read_to_string(dir.path().join("stability.csv")).unwrap();
    assert!(stability.starts_with("k,A_star,T_used,regime,err_hms,err_l2,lip_term,log_term,band_mode,seed"));
    assert_eq!(stability.lines().count(), 2);
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"dim": 2, "no_such_field": 1}"#).unwrap();
    let out = helmstab().arg("sweep").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = helmstab()
        .args(["sweep", "--dim", "4"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
