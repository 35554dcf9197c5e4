use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn roughlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughlab")).args(args).env("ROUGHLAB_THREADS", "2").output().expect("binary runs")
}

fn clt_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("out{seed}"));
    let text = format!(
        "kind = \"clt\"\nseed = {seed}\nn_paths = 400\nepsilons = [0.1, 0.02]\nobservables = [\"H1\"]\noutput_dir = {:?}\n\
         [noise]\nkind = \"markov\"\nrates = [[-1.0, 1.0], [1.0, -1.0]]\nvalues = [-1.0, 1.0]\n",
        out.display().to_string()
    );
    let path = dir.join(format!("clt{seed}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn metrics(dir: &Path) -> serde_json::Value {
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    report["metrics"].clone()
}

#[test]
fn valid_config_writes_report_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = clt_config(tmp.path(), 7);
    let out = roughlab(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let dir = tmp.path().join("out7");
    let csv = fs::read_to_string(dir.join("clt.csv")).unwrap();
    assert!(csv.starts_with("epsilon,channel,t,ks_statistic"));
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(metrics(&dir)["area_matrix"][0][0].as_f64().unwrap() > 0.0);
}

#[test]
fn rerun_with_same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = clt_config(tmp.path(), 11);
    let dir = tmp.path().join("out11");
    assert_eq!(roughlab(&["run", cfg.to_str().unwrap()]).status.code(), Some(0));
    let first = fs::read_to_string(dir.join("report.json")).unwrap();
    assert_eq!(roughlab(&["run", cfg.to_str().unwrap(), "--threads", "1"]).status.code(), Some(0));
    assert_eq!(first, fs::read_to_string(dir.join("report.json")).unwrap());
}

#[test]
fn unknown_kind_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "kind = \"bogus\"\nseed = 1\n").unwrap();
    let out = roughlab(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`kind`"));
}

#[test]
fn regime_mismatch_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = roughlab(&["verify-clt", "--observable", "H1", "--hurst", "0.7", "--seed", "1", "--paths", "10", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("H*(m)"));
}

#[test]
fn simulate_then_lift() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let lift = tmp.path().join("lift");
    let out = roughlab(&["simulate", "--noise", "fou", "--count", "1025", "--paths", "3", "--seed", "2", "--out", sim.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let input = sim.join("paths.rhpc");
    let out = roughlab(&[
        "lift", "--input", input.to_str().unwrap(), "--observable", "H2", "--observable", "H3", "--eps", "0.125", "--out",
        lift.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(lift.join("lift_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["paths"], 3);
    assert!(summary["relative_chen_defect"].as_array().unwrap().iter().all(|d| d.as_f64().unwrap() <= 1e-12));
    assert!(lift.join("lift_2.rhpc").exists());
}

#[test]
fn homogenize_with_zero_field_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = roughlab(&[
        "homogenize", "--field", "zero", "--x0", "2.0", "--seed", "4", "--paths", "50", "--eps", "0.1,0.05", "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(metrics(tmp.path())["epsilons"][1]["distance"], 0.0);
}
