use std::path::Path;
use std::process::Command;

fn rowsim(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_rowsim")).args(args).output().expect("spawn rowsim");
    assert!(out.status.success(), "rowsim {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf8")
}

fn config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/mix.json").display().to_string()
}

#[test]
fn profile_simulate_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s4");
    let data = data.to_str().unwrap();
    rowsim(&[
        "profile", "--template", "S4", "--banks", "2", "--rows", "2048", "--seed", "3",
        "--subarray-size", "256", "--plant", "subarray_bit_0", "--out", data,
    ]);
    for f in ["profile.csv", "profile.header.json", "layout.json"] {
        assert!(Path::new(data).join(f).exists(), "{f} missing");
    }

    let report = dir.path().join("report.json");
    let sweep = dir.path().join("sweep.csv");
    let stdout = rowsim(&[
        "simulate", "--config", &config(), "--profile", &format!("{data}/profile.csv"), "--defense", "para",
        "--svard=table", "--hcfirst-scale", "64", "--out", report.to_str().unwrap(), "--sweep", sweep.to_str().unwrap(),
    ]);
    assert!(stdout.contains(" 0 flips"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["flips"].as_array().unwrap().is_empty());
    let sweep = std::fs::read_to_string(&sweep).unwrap();
    assert!(sweep.lines().nth(1).unwrap().starts_with("para,table,S4,64,"), "{sweep}");

    let stdout = rowsim(&["analyze", "--dataset", data, "--klo", "2", "--khi", "32"]);
    assert!(stdout.contains("correlated: subarray_bit_0"), "{stdout}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(data).join("analysis/manifest.json")).unwrap()).unwrap();
    for f in manifest["files"].as_array().unwrap() {
        assert!(Path::new(data).join("analysis").join(f.as_str().unwrap()).exists());
    }
}

#[test]
fn unknown_defense_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    rowsim(&["profile", "--banks", "1", "--rows", "256", "--out", data]);
    let out = Command::new(env!("CARGO_BIN_EXE_rowsim"))
        .args(["simulate", "--config", &config(), "--profile", &format!("{data}/profile.csv"), "--defense", "trr"])
        .args(["--out", &format!("{data}/r.json")])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
