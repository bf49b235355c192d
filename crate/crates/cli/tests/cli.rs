use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lambdaflow"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], cfg: Option<&str>, out: &Path) -> Output {
    let mut cmd = bin();
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = cfg {
        cmd.arg("--config").arg(config(c));
    }
    cmd.output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_writes_outputs_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&run(&["run"], Some("gauss_bump.json"), dir.path()));
    assert!(stdout.contains("GAUSS_BUMP"));
    for f in ["timeline.csv", "overheads.csv", "result_gauss_bump.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("result_gauss_bump.json")).unwrap()).unwrap();
    assert!(result["n_windows"].as_u64().unwrap() < 13);

    let other = tempfile::tempdir().unwrap();
    ok(&run(&["run", "--mode", "NONADAPTIVE", "--seed", "5"], Some("gauss_bump.json"), other.path()));
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(other.path().join("result_gauss_bump.json")).unwrap()).unwrap();
    assert_eq!(result["n_windows"], 13);
}

#[test]
fn reruns_write_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&run(&["run"], Some("gauss_bump.json"), d.path()));
        ok(&run(&["sweep", "weak"], Some("sweep.json"), d.path()));
    }
    for f in ["timeline.csv", "overheads.csv", "sweep_weak.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seeds_change_the_noisy_result() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&run(&["run", "--seed", "1"], Some("gauss_bump.json"), a.path()));
    ok(&run(&["run", "--seed", "2"], Some("gauss_bump.json"), b.path()));
    let name = "result_gauss_bump.json";
    assert_ne!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
}

#[test]
fn report_commands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&run(&["validate"], None, dir.path()));
    assert!(stdout.contains("BRD4 3 to 7"));
    let csv = std::fs::read_to_string(dir.path().join("validation.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "transformation,htbac,published,experiment,within_error");

    let stdout = ok(&run(&["term-report"], Some("termination.json"), dir.path()));
    assert!(stdout.contains("TYK2 L7-L8"));
    assert!(dir.path().join("termination.csv").is_file());

    ok(&run(&["sweep", "STRONG"], Some("sweep.json"), dir.path()));
    assert!(dir.path().join("sweep_strong.csv").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["run"], Some("does_not_exist.json"), dir.path());
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "pilot": {"total_cores": 0}}"#).unwrap();
    let o = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pilot"));

    // Output directory underneath a regular file cannot be created.
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    let o = run(&["validate"], None, &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(3));
}
