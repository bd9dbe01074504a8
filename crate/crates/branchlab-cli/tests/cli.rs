use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_branchlab"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn gw_reports_regime_and_extinction() {
    let dir = tempfile::tempdir().unwrap();
    let law = write(dir.path(), "law.json", r#"{"probs": [[0, 0.25], [2, 0.75]], "displacement": null}"#);
    let out = bin()
        .args(["--out", dir.path().to_str().unwrap(), "gw", "--law", law.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let artifact: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gw.json")).unwrap()).unwrap();
    assert_eq!(artifact["result"]["regime"], "supercritical");
    let q = artifact["result"]["extinction_prob"].as_f64().unwrap();
    assert!((q - 1.0 / 3.0).abs() < 1e-9);
    assert_eq!(artifact["version"], env!("CARGO_PKG_VERSION"));
    assert!(artifact["config_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn gw_critical_law_is_classified() {
    let dir = tempfile::tempdir().unwrap();
    let law = write(dir.path(), "critical.json", r#"{"probs": [[0, 0.5], [2, 0.5]], "displacement": null}"#);
    let out = bin()
        .args(["--out", dir.path().to_str().unwrap(), "gw", "--law", law.to_str().unwrap()])
        .output()
        .unwrap();
    // near-critical fixed points trip the non-convergence flag: exit 3
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let artifact: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gw.json")).unwrap()).unwrap();
    assert_eq!(artifact["result"]["regime"], "critical");
    assert!(artifact["result"]["extinction_prob"].as_f64().unwrap() > 0.9999);
}

#[test]
fn malformed_toml_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "bad.toml",
        "[space]\nkind = \"lattice_zd\"\ndim = 1\nwrong_key = 1\n\n[law]\nprobs = [[1, 1.0]]\n",
    );
    let out = bin()
        .args([
            "--out",
            dir.path().to_str().unwrap(),
            "bmc",
            "--spec",
            spec.to_str().unwrap(),
            "--mode",
            "expected",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("wrong_key"), "stderr: {stderr}");
}

#[test]
fn outputs_are_byte_identical_for_identical_config_and_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let spec_text = "[space]\nkind = \"lattice_zd\"\ndim = 1\n\n[law]\nprobs = [[0, 0.25], [2, 0.75]]\ndisplacement = \"srw\"\n";
    for dir in [&dir_a, &dir_b] {
        let spec = write(dir.path(), "spec.toml", spec_text);
        let out = bin()
            .args([
                "--out",
                dir.path().to_str().unwrap(),
                "--seed",
                "7",
                "--replicas",
                "50",
                "bmc",
                "--spec",
                spec.to_str().unwrap(),
                "--mode",
                "simulate",
                "--horizon",
                "20",
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["bmc.json", "bmc_trace.csv"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn repro_intervals_reports_exact_averages() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "--out",
            dir.path().to_str().unwrap(),
            "--replicas",
            "200",
            "repro",
            "--example",
            "intervals",
            "--n",
            "3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let artifact: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("repro.json")).unwrap())
            .unwrap();
    assert_eq!(artifact["result"]["avg_at_s"], "0");
    assert_eq!(artifact["result"]["avg_at_s_plus_a"], "4/5");
    assert_eq!(artifact["result"]["rescaled_measure"], "1/2");
    assert_eq!(artifact["result"]["closed_forms_hold"], true);
}

#[test]
fn spectral_growth_on_lattice_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "kernel.toml",
        "[space]\nkind = \"lattice_zd\"\ndim = 1\n\n[law]\nprobs = [[0, 0.35], [2, 0.65]]\ndisplacement = \"srw\"\n",
    );
    let out = bin()
        .args([
            "--out",
            dir.path().to_str().unwrap(),
            "spectral",
            "--kernel",
            spec.to_str().unwrap(),
            "--mode",
            "growth",
            "--n-max",
            "48",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let artifact: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("spectral.json")).unwrap())
            .unwrap();
    let value = artifact["result"]["value"].as_f64().unwrap();
    assert!((value - 1.3).abs() < 1e-6, "growth exponent {value}");
}
