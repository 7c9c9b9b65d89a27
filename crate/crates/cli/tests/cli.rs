use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

const FINITE: &str = "case = \"1\"\nNx = 60\nNt = 30\n";
const STATIONARY: &str = "case = \"5\"\nNx = 100\nNt = 50\nT = 0.5\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condctl"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run_ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workspace(files: &[(&str, &str)]) -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for (name, text) in files {
        fs::write(tmp.path().join(name), text).unwrap();
    }
    tmp
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Every CSV in `dir` appears in the manifest with a matching checksum.
fn check_inventory(dir: &Path) -> Vec<String> {
    let m = manifest(dir);
    let listed: Vec<(String, String)> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["name"].as_str().unwrap().into(),
                f["sha256"].as_str().unwrap().into(),
            )
        })
        .collect();
    let mut on_disk: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut names: Vec<String> = listed.iter().map(|(n, _)| n.clone()).collect();
    names.sort();
    assert_eq!(names, on_disk);
    for (name, sum) in &listed {
        let data = fs::read(dir.join(name)).unwrap();
        assert_eq!(&hex::encode(Sha256::digest(&data)), sum, "{name}");
    }
    names
}

#[test]
fn finite_run_writes_expected_files_and_headers() {
    let ws = workspace(&[("run.toml", FINITE)]);
    run_ok(
        ws.path(),
        &["solve-finite", "--config", "run.toml", "--out", "o"],
    );
    let o = ws.path().join("o");
    assert_eq!(check_inventory(&o), ["fields.csv", "iters.csv", "mass.csv"]);
    assert_eq!(header(&o.join("fields.csv")), "t,x,p,u,b");
    assert_eq!(header(&o.join("mass.csv")), "t,mass");
    assert!(header(&o.join("iters.csv")).starts_with("k,l2_gap_p,l2_gap_u,energy_pairing"));
    let m = manifest(&o);
    assert_eq!(m["case"], "1");
    assert_eq!(m["config"]["spec"]["cells"][0], 60);
    assert_eq!(m["summary"]["converged"], true);
    let mass = fs::read_to_string(o.join("mass.csv")).unwrap();
    assert_eq!(mass.lines().count(), 1 + 31);
}

#[test]
fn reruns_are_bit_identical() {
    let ws = workspace(&[("run.toml", FINITE)]);
    let args = [
        "--config", "run.toml", "--paths", "2000", "--mc-dt", "1e-3", "--seed", "4",
    ];
    for out in ["a", "b"] {
        let mut full = vec!["mc-validate", "--out", out];
        full.extend(args);
        run_ok(ws.path(), &full);
        run_ok(
            ws.path(),
            &[
                "solve-finite",
                "--config",
                "run.toml",
                "--out",
                &format!("{out}f"),
            ],
        );
    }
    for (x, y) in [("a", "b"), ("af", "bf")] {
        let names = check_inventory(&ws.path().join(x));
        for name in names {
            let p = fs::read(ws.path().join(x).join(&name)).unwrap();
            let q = fs::read(ws.path().join(y).join(&name)).unwrap();
            assert!(p == q, "{x}/{name} differs from {y}/{name}");
        }
    }
    assert_eq!(manifest(&ws.path().join("a"))["seed"], 4);
}

#[test]
fn monte_carlo_reports_survival_against_the_density() {
    let ws = workspace(&[("run.toml", FINITE)]);
    run_ok(
        ws.path(),
        &[
            "mc-validate",
            "--config",
            "run.toml",
            "--paths",
            "4000",
            "--mc-dt",
            "1e-3",
            "--checkpoints",
            "3",
            "--out",
            "o",
        ],
    );
    let o = ws.path().join("o");
    assert_eq!(check_inventory(&o), ["histogram.csv", "survival.csv"]);
    assert!(header(&o.join("survival.csv")).starts_with("t,p_hat,stderr"));
    let text = fs::read_to_string(o.join("survival.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!((rows[2][0] - 0.2).abs() < 1e-12);
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]));
}

#[test]
fn stationary_case_reports_eigenvalue() {
    let ws = workspace(&[("run.toml", STATIONARY)]);
    run_ok(
        ws.path(),
        &["solve-stationary", "--config", "run.toml", "--out", "o"],
    );
    let o = ws.path().join("o");
    assert_eq!(
        check_inventory(&o),
        ["eigen.csv", "iters.csv", "stationary.csv"]
    );
    let text = fs::read_to_string(o.join("eigen.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("lambda,residual"));
    let lambda: f64 = lines
        .next()
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((lambda - 3.15).abs() < 0.01, "{lambda}");
}

#[test]
fn preset_case_five_matches_reference_eigenvalue() {
    let ws = workspace(&[]);
    run_ok(ws.path(), &["case", "5", "--out", "o"]);
    let m = manifest(&ws.path().join("o"));
    let lambda = m["summary"]["lambda"].as_f64().unwrap();
    assert!((lambda - 3.15).abs() < 0.01, "{lambda}");
}

#[test]
fn scaled_and_turnpike_outputs() {
    let ws = workspace(&[("run.toml", STATIONARY)]);
    run_ok(
        ws.path(),
        &["solve-scaled", "--config", "run.toml", "--out", "s"],
    );
    let s = ws.path().join("s");
    assert_eq!(
        check_inventory(&s),
        ["eigen.csv", "fields.csv", "iters.csv", "mass.csv"]
    );
    assert_eq!(header(&s.join("mass.csv")), "t,mass,scaled_mass");

    run_ok(
        ws.path(),
        &[
            "turnpike",
            "--config",
            "run.toml",
            "--horizons",
            "0.5,1",
            "--out",
            "t",
        ],
    );
    let t = ws.path().join("t");
    assert_eq!(check_inventory(&t), ["eigen.csv", "turnpike.csv"]);
    let text = fs::read_to_string(t.join("turnpike.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "horizon,t,dist_p,dist_u");
    let horizons: std::collections::BTreeSet<String> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(horizons.len(), 2);
}

#[test]
fn two_dimensional_fields_have_both_coordinates() {
    let ws = workspace(&[("run.toml", "case = \"2d-b\"\nNx = 10\nNy = 10\nNt = 10\n")]);
    run_ok(
        ws.path(),
        &["solve-finite", "--config", "run.toml", "--out", "o"],
    );
    assert_eq!(header(&ws.path().join("o/fields.csv")), "t,x,y,p,u,b_x,b_y");
}

#[test]
fn config_errors_exit_with_code_two_and_point_at_the_line() {
    let ws = workspace(&[("bad.toml", "case = \"1\"\nNx = 40\nsigma = \"wide\"\n")]);
    let out = run(
        ws.path(),
        &["solve-finite", "--config", "bad.toml", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(!ws.path().join("o").exists());

    let ws = workspace(&[("neg.toml", "case = \"1\"\nsigma = -1.0\n")]);
    let out = run(ws.path(), &["solve-finite", "--config", "neg.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overrides_reach_the_resolved_config() {
    // The growing printed-sign bump needs a bounded control for Newton to converge.
    let ws = workspace(&[("run.toml", &format!("{FINITE}M = 5.0\n"))]);
    run_ok(
        ws.path(),
        &[
            "solve-finite",
            "--config",
            "run.toml",
            "--theta",
            "0.5",
            "--tol",
            "1e-7",
            "--cost-sign",
            "printed",
            "--out",
            "o",
        ],
    );
    let m = manifest(&ws.path().join("o"));
    assert_eq!(m["config"]["theta"], 0.5);
    assert_eq!(m["config"]["tol_fixed_point"], 1e-7);
    assert_eq!(m["config"]["spec"]["cost_sign"], "printed");
    assert_eq!(m["config"]["spec"]["M"], 5.0);
}

#[test]
fn solver_failure_exits_nonzero_after_writing_outputs() {
    let ws = workspace(&[("run.toml", FINITE)]);
    let out = run(
        ws.path(),
        &[
            "solve-finite",
            "--config",
            "run.toml",
            "--max-iters",
            "1",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
    check_inventory(&ws.path().join("o"));
}
