use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn dissipnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dissipnet"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_verify_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixture("skew_pair.json");
    for alg in ["1", "2"] {
        let out = dir.path().join(format!("alg{alg}"));
        let o = dissipnet(&["analyze", "--net", path(&net), "--alg", alg, "--out", path(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["certificate.json", "trace.csv", "audit.jsonl", "summary.json"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let v = dissipnet(&[
            "verify",
            "--net",
            path(&net),
            "--cert",
            path(&out.join("certificate.json")),
        ]);
        assert_eq!(v.status.code(), Some(0));
        assert!(String::from_utf8_lossy(&v.stdout).contains("verdict: certified"));
    }
    let r = dissipnet(&["report", "--runs", path(dir.path())]);
    assert_eq!(r.status.code(), Some(0));
    let csv = String::from_utf8(r.stdout).unwrap();
    assert!(csv.starts_with("n_uavs,algorithm,iterations,avg_iter_ms,total_s,status"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn tampered_certificate_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("cert.json");
    let text = r#"{"agents": [
        {"index": 1, "P": [[0.5]], "Q": [[-0.5]], "S": [[0.5]], "R": [[0.0]]},
        {"index": 2, "P": [[0.5]], "Q": [[-2.0]], "S": [[0.5]], "R": [[0.0]]}]}"#;
    std::fs::write(&cert, text).unwrap();
    let o = dissipnet(&[
        "verify",
        "--net",
        path(&fixture("skew_pair.json")),
        "--cert",
        path(&cert),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("failed: agent 2"));
}

#[test]
fn infeasible_network_is_not_certified() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixture("infeasible_positive_pair_k2.json");
    let o = dissipnet(&[
        "analyze",
        "--net",
        path(&net),
        "--alg",
        "2",
        "--out",
        path(dir.path()),
        "--max-iter",
        "100",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("not certified"));
}

#[test]
fn example_and_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("uav.json");
    let o = dissipnet(&["example", "uav", "--subgroups", "2", "--out", path(&file)]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&file).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["agents"].as_array().unwrap().len(), 6);
    let d = dissipnet(&["decompose", "--net", path(&file)]);
    assert_eq!(d.status.code(), Some(0));
    let s: serde_json::Value = serde_json::from_slice(&d.stdout).unwrap();
    assert!(s["M"].as_u64().unwrap() >= 1);
}

#[test]
fn bad_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"agents\": 3}").unwrap();
    assert_eq!(dissipnet(&["decompose", "--net", path(&bad)]).status.code(), Some(1));
    assert_eq!(
        dissipnet(&["decompose", "--net", "/nonexistent.json"]).status.code(),
        Some(1)
    );
    assert_eq!(
        dissipnet(&["example", "uav", "--subgroups", "9", "--out", path(&bad)])
            .status
            .code(),
        Some(1)
    );
}
