use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qalab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qalab")).args(args).output().expect("binary runs")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

const SMALL: &str = r#"
[model]
family = "tfim"
lambda = 0.5

[lattice]
extents = [4]

[cut]
sites = [0, 1]

[flow]
s_grid = [0.0, 0.5, 1.0]
radii = [1]
steps = 20

[filter]
gamma = 0.9
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn validate_config_on_shipped_defaults() {
    for name in ["tfim10.toml", "tfim8.toml"] {
        let out = qalab(&["validate-config", "--config", shipped(name).to_str().unwrap()]);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(out.status.success(), "{name}: {stdout}");
        assert!(stdout.lines().any(|l| l == "OK"));
        assert!(stdout.contains("config hash "));
    }
}

#[test]
fn bound_report_needs_upstream_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = qalab(&["bound-report", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing upstream artifact"), "{stderr}");
    assert!(stderr.contains("decompose-scan"), "{stderr}");
}

#[test]
fn stages_chain_and_detect_stale_caches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out_s = out_dir.to_str().unwrap();
    for stage in ["gap-scan", "flow", "decompose-scan", "entropy-report", "bound-report"] {
        let out = qalab(&[stage, "--config", &cfg, "--out", out_s, "--workers", "1"]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let gap = fs::read_to_string(out_dir.join("gap_scan.csv")).unwrap();
    assert_eq!(gap.lines().count(), 1 + 3);
    let bound: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("bound.json")).unwrap()).unwrap();
    let first = &bound["data"]["points"][0]["report"];
    for key in ["R0", "c1", "h1", "bound", "measured_entropy", "margin"] {
        assert!(!first[key].is_null(), "bound report lacks {key}");
    }

    write_config(dir.path(), &SMALL.replace("steps = 20", "steps = 40"));
    let out = qalab(&["decompose-scan", "--config", &cfg, "--out", out_s]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stale artifact"));
}

#[test]
fn run_writes_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = qalab(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let rec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_record.json")).unwrap()).unwrap();
    assert_eq!(rec["passed"], true);
    assert_eq!(rec["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn bad_configs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("sites = [0, 1]", "sites = [0, 7]"));
    let out = qalab(&["validate-config", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
    let out = qalab(&["gap-scan", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
