//! End-to-end checks of the `idla` binary: snapshot round trips,
//! deterministic CSV, renders, and verify exit codes.

use std::process::Command;

fn idla() -> Command {
    Command::new(env!("CARGO_BIN_EXE_idla"))
}

#[test]
fn grow_render_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("c.idla");
    let out = idla()
        .args([
            "grow",
            "--dim",
            "2",
            "--time",
            "200",
            "--seed",
            "11",
            "--stream",
            "1",
            "--out",
        ])
        .arg(&snap)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(snap.exists());

    for (kind, extra) in [("lateness", vec!["--bound", "2.0"]), ("symdiff", vec![])] {
        let ppm = dir.path().join(format!("{kind}.ppm"));
        let mut cmd = idla();
        cmd.args(["render", kind, "--input"])
            .arg(&snap)
            .arg("--out")
            .arg(&ppm)
            .args(extra);
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let bytes = std::fs::read(&ppm).unwrap();
        assert!(bytes.starts_with(b"P6\n"));
    }
}

#[test]
fn moments_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = idla()
            .args([
                "moments", "--trials", "4", "--time", "60", "--kmax", "2", "--seed", "3", "--out",
            ])
            .arg(path)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ca = std::fs::read(&a).unwrap();
    let cb = std::fs::read(&b).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert!(text.contains("seed,stream,t,name,k,re,im"));
    assert!(text.contains("config_hash="));
}

#[test]
fn verify_sandpile_exits_zero_and_emits_json() {
    let out = idla().args(["verify", "sandpile"]).output().unwrap();
    assert!(out.status.success());
    let verdicts: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(verdicts.as_array().unwrap().len() >= 8);
}

#[test]
fn verify_fails_with_impossible_tolerance() {
    let out = idla()
        .args(["verify", "sandpile", "--mass-tol", "1e-18"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn poly_json_output_parses() {
    let out = idla().args(["poly", "--pk", "4"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let terms = v["terms"].as_array().unwrap();
    assert_eq!(terms.len(), 2);
}

#[test]
fn gff_table_and_sample() {
    let out = idla()
        .args(["gff", "--mode-table", "--dim", "3", "--lmax", "2", "--kind", "ordinary"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);

    let out = idla()
        .args(["gff", "--sample", "--kmax", "5", "--seed", "9"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["alpha"].as_array().unwrap().len(), 6);
    assert_eq!(v["beta"].as_array().unwrap().len(), 5);
}
