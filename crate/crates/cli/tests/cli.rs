use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_verifsim"));
    c.env_remove("VERIFSIM_OUT");
    c
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scenario.json"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn tree_digest(dir: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(fs::read(&f).unwrap());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn simulate(seed: u64, name: &str, out: &Path) {
    let o = run(bin().args(["simulate", "--seed", &seed.to_string(), "--out"]).arg(out).arg("--scenario").arg(scenario(name)));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn verify(seed: u64, dir: &Path, extra: &[&str]) -> Output {
    run(bin().arg("verify").arg(dir).args(["--seed", &seed.to_string()]).args(extra))
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        simulate(3, "honest", d.path());
        assert_eq!(verify(3, d.path(), &[]).status.code(), Some(0));
    }
    assert_eq!(tree_digest(a.path()), tree_digest(b.path()));
    let c = tempfile::tempdir().unwrap();
    simulate(4, "honest", c.path());
    assert_ne!(tree_digest(a.path()), tree_digest(c.path()));
}

#[test]
fn verdicts_map_to_exit_codes() {
    let honest = tempfile::tempdir().unwrap();
    simulate(5, "honest", honest.path());
    let o = verify(5, honest.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "compliant");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(honest.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["overall"], "compliant");

    let glue = tempfile::tempdir().unwrap();
    simulate(5, "glue", glue.path());
    let o = verify(5, glue.path(), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "non_compliant");

    fs::remove_file(honest.path().join("network.tap.json")).unwrap();
    let mut only_tap = Vec::new();
    for m in [
        "faithfulness",
        "init_order",
        "optimizer",
        "declared_ops",
        "glue",
        "duplicates",
        "structure",
        "tokens",
        "inference",
        "classification",
        "properties",
        "accounting",
        "signature",
        "certificates",
        "counters",
        "cert_hours",
        "fill",
        "registry",
        "licensing",
    ] {
        only_tap.push("--toggle".to_string());
        only_tap.push(format!("{m}=off"));
    }
    let args: Vec<&str> = only_tap.iter().map(String::as_str).collect();
    assert_eq!(verify(5, honest.path(), &args).status.code(), Some(4));
}

#[test]
fn bad_input_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let o = run(bin().args(["simulate", "--seed", "1", "--scenario", "/nonexistent.scenario.json", "--out"]).arg(d.path()));
    assert_eq!(o.status.code(), Some(2));

    let bad = d.path().join("bad.scenario.json");
    fs::write(&bad, r#"{"name":"x","behavior":"teleport"}"#).unwrap();
    let o = run(bin().args(["simulate", "--seed", "1", "--out"]).arg(d.path()).arg("--scenario").arg(&bad));
    assert_eq!(o.status.code(), Some(2));

    simulate(1, "honest", d.path());
    assert_eq!(verify(1, d.path(), &["--toggle", "telepathy=off"]).status.code(), Some(2));
    assert_eq!(verify(1, d.path(), &["--toggle", "glue=maybe"]).status.code(), Some(2));
    assert_eq!(verify(1, &d.path().join("missing"), &[]).status.code(), Some(2));
    assert_eq!(run(bin().args(["oracle", "--seed", "1", "--kind", "monte_carlo"])).status.code(), Some(2));
}

#[test]
fn env_out_overrides_flag() {
    let (env_dir, flag_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = run(bin()
        .env("VERIFSIM_OUT", env_dir.path())
        .args(["simulate", "--seed", "2", "--out"])
        .arg(flag_dir.path())
        .arg("--scenario")
        .arg(scenario("honest")));
    assert!(o.status.success());
    assert!(env_dir.path().join("registry.json").exists());
    assert!(!flag_dir.path().join("registry.json").exists());
}

#[test]
fn oracle_writes_detection_formula() {
    let d = tempfile::tempdir().unwrap();
    let o = run(bin()
        .args(["oracle", "--seed", "1", "--kind", "detection_formula", "--p", "0.5", "--m", "10", "--out"])
        .arg(d.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("detection_formula.oracle.json")).unwrap()).unwrap();
    assert!(v.to_string().contains("0.9990234375"), "{v}");
}

#[test]
fn attack_then_report() {
    let d = tempfile::tempdir().unwrap();
    for name in ["honest", "glue"] {
        let o = run(bin()
            .args(["attack", "--seed", "9", "--trials", "3", "--jobs", "1", "--out"])
            .arg(d.path())
            .arg("--scenario")
            .arg(scenario(name)));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let glue: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("glue.summary.json")).unwrap()).unwrap();
    assert_eq!(glue["detected"], 3);
    let honest: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("honest.summary.json")).unwrap()).unwrap();
    assert_eq!(honest["detected"], 0);

    let o = run(bin().arg("report").arg(d.path()).args(["--format", "svg", "--out"]).arg(d.path()));
    assert!(o.status.success());
    let svg = fs::read_to_string(d.path().join("detection.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("glue"));
}
