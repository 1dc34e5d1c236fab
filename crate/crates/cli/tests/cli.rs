use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn pmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmc"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("pmc runs")
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
        .display()
        .to_string()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn read(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_constant_two_gives_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = pmc(&[
        "solve",
        "--h-target",
        &data("const2.json"),
        "--L",
        "10",
        "--noise",
        "1e-3",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = read(out_dir.join("manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["timestamp"], 1_700_000_000u64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);
    for b in manifest["diagnostics"]["affine"]["b"].as_array().unwrap() {
        assert!(b.as_f64().unwrap().abs() < 1e-10);
    }
    let report = read(out_dir.join("report.json"));
    assert_eq!(report["status"], "converged");
    let area = report["verification"]["area"].as_f64().unwrap();
    assert!((area - 4.0 * std::f64::consts::PI).abs() < 1e-8, "{area}");
}

#[test]
fn solve_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let d = dir.path().join(name);
        let out = pmc(&[
            "solve",
            "--h-target",
            &data("h_2_plus_x3.json"),
            "--L",
            "8",
            "--noise",
            "1e-3",
            "--seed",
            "5",
            "--out-dir",
            d.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        d
    };
    let (a, b) = (run("a"), run("b"));
    for f in [
        "immersion.json",
        "affine.json",
        "report.json",
        "surface.obj",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn unreachable_tolerance_stalls_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("stall");
    let out = pmc(&[
        "solve",
        "--h-target",
        &data("const2.json"),
        "--L",
        "6",
        "--tol",
        "1e-30",
        "--out-dir",
        d.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(read(d.join("report.json"))["status"], "stalled");
    assert!(d.join("manifest.json").exists());
}

#[test]
fn rejected_target_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("neg.json");
    std::fs::write(&h, r#"{"constant": 1, "linear": [0, 0, 2]}"#).unwrap();
    let d = dir.path().join("out");
    let out = pmc(&[
        "solve",
        "--h-target",
        h.to_str().unwrap(),
        "--L",
        "6",
        "--out-dir",
        d.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.exists());
}

#[test]
fn balance_of_two_plus_x3() {
    let out = pmc(&[
        "balance",
        "--h",
        &data("h_2_plus_x3.json"),
        "--weight",
        "round",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let b: Vec<f64> = v["b"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!(
        b[0].abs() < 1e-8 && b[1].abs() < 1e-8 && (b[2] + 1.0).abs() < 1e-8,
        "{b:?}"
    );
    assert!((v["representative_min"].as_f64().unwrap() - 3.0).abs() < 1e-8);
    assert!((v["representative_max"].as_f64().unwrap() - 3.0).abs() < 1e-8);
}

#[test]
fn verify_ellipsoid() {
    let out = pmc(&["verify", "--immersion", &data("ellipsoid.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert!(v["gauss_identity"].as_f64().unwrap().abs() < 1e-6);
}

#[test]
fn example_enneper_reports_branch_point() {
    let out = pmc(&[
        "example", "--family", "enneper", "--param", "0", "--radius", "1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let bp = &v["branch_points"][0];
    assert_eq!(bp["order"], 2);
    let out = pmc(&[
        "example", "--family", "odd", "--param", "1.5", "--radius", "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn example_writes_mesh_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = pmc(&[
        "example",
        "--family",
        "even",
        "--param",
        "1",
        "--radius",
        "2",
        "--rings",
        "10",
        "--angles",
        "12",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let obj = std::fs::read_to_string(dir.path().join("surface.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 120);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn export_obj_counts_vertices() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.obj");
    let out = pmc(&[
        "export-obj",
        "--in",
        &data("ellipsoid.json"),
        "--out",
        path.to_str().unwrap(),
        "--grid-degree",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let obj = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        obj.lines().filter(|l| l.starts_with("v ")).count(),
        9 * 18 + 2
    );
    let manifest = read(dir.path().join("e.obj.manifest.json"));
    assert_eq!(manifest["command"], "export-obj");
}

#[test]
fn input_errors_exit_one() {
    assert_eq!(pmc(&["solve", "--bogus"]).status.code(), Some(1));
    assert_eq!(pmc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        pmc(&["verify", "--immersion", "/nonexistent.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(pmc(&["--help"]).status.code(), Some(0));
}
