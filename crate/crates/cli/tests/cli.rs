use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn leap() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leap"))
}

const CONFIG: &str = r#"
[environment]
kind = "tiger"
horizon = 3

[leap]
num_iterations = 2
rollouts_per_iteration = 16
num_demos = 12
root_seed = 3
truncation_window = 1
teacher = { kind = "constrained", delta = 0.05 }

[analysis]
evaluation = "monte_carlo"
evaluation_episodes = 400

[output]
dir = "out"
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&std::ffi::OsStr]) -> Output {
    leap().args(args).output().unwrap()
}

#[test]
fn run_writes_three_rows_for_two_iterations() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("run");
    let o = run(&["run".as_ref(), config.as_os_str(), "--out".as_ref(), out.as_os_str()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("iteration,J,success_rate"));
    for f in ["metrics.json", "manifest.json", "snapshots/pi_0.json", "snapshots/pi_1.json", "snapshots/pi_2.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn rerun_is_byte_identical_and_seed_override_changes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    for (i, d) in dirs.iter().enumerate() {
        let mut args: Vec<&std::ffi::OsStr> = vec!["run".as_ref(), config.as_os_str(), "--out".as_ref(), d.as_os_str()];
        if i == 2 {
            args.extend(["--seed", "99"].map(std::ffi::OsStr::new));
        }
        assert!(run(&args).status.success());
    }
    let read = |d: &PathBuf| std::fs::read(d.join("metrics.json")).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
    assert_ne!(read(&dirs[0]), read(&dirs[2]));
    assert_eq!(
        std::fs::read(dirs[0].join("manifest.json")).unwrap(),
        std::fs::read(dirs[1].join("manifest.json")).unwrap()
    );
}

#[test]
fn missing_required_key_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &CONFIG.replace("root_seed = 3\n", ""));
    let out = tmp.path().join("run");
    let o = run(&["run".as_ref(), config.as_os_str(), "--out".as_ref(), out.as_os_str()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("root_seed") && err.contains("config.toml:"), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_environment_parameters_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &CONFIG.replace("horizon = 3", "horizon = 3\naccuracy = 0.2"));
    let out = tmp.path().join("run");
    let o = run(&["run".as_ref(), config.as_os_str(), "--out".as_ref(), out.as_os_str()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn runtime_failure_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let text = CONFIG.replace("evaluation = \"monte_carlo\"", "evaluation = \"exact\"\nhistory_cap = 5");
    let config = write_config(tmp.path(), &text);
    let out = tmp.path().join("run");
    let o = run(&["run".as_ref(), config.as_os_str(), "--out".as_ref(), out.as_os_str()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("metrics.json").exists());
}

#[test]
fn sweep_emits_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("sweep");
    let o = run(&[
        "sweep".as_ref(),
        config.as_os_str(),
        "--param".as_ref(),
        "delta".as_ref(),
        "--values".as_ref(),
        "0,0.01,0.05,0.1,5".as_ref(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("tradeoff.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("value,final_success,final_J,theorem1_slack,realizability_gap"));
    assert_eq!(lines.count(), 5);
    assert!(out.join("delta_0.05/metrics.csv").is_file());
}

#[test]
fn unknown_sweep_parameter_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let o = run(&[
        "sweep".as_ref(),
        config.as_os_str(),
        "--param".as_ref(),
        "gamma".as_ref(),
        "--values".as_ref(),
        "1".as_ref(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
