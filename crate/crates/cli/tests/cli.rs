use std::path::Path;
use std::process::{Command, Output};

fn bevlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bevlab")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = bevlab(&["--help"], dir.path());
    assert!(o.status.success());
    for sub in ["gen", "distill", "fuse", "bench", "gradcheck", "ablate-pool"] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
    }
}

#[test]
fn gradcheck_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = bevlab(&["gradcheck", "--out", "r", "--json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["gradcheck.csv", "gradcheck.summary.csv", "gradcheck.json", "gradcheck.config.toml"] {
        assert!(dir.path().join("r").join(f).exists(), "{f} not written");
    }
    let csv = std::fs::read_to_string(dir.path().join("r/gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn impossible_tolerance_gives_failure_exit() {
    let dir = tempfile::tempdir().unwrap();
    let o = bevlab(&["gradcheck", "--out", "r", "--set", "gradcheck.tolerance=1e-300"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_override_and_thread_cap_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = bevlab(&["distill", "--set", "icd.nope=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("icd.nope"));
    let o = Command::new(env!("CARGO_BIN_EXE_bevlab"))
        .args(["gradcheck", "--out", "r"])
        .env("BEVLAB_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_seed_and_resolved_copy() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "seed = 4\n[optim]\nsteps = 2\n").unwrap();
    let o = bevlab(&["distill", "--config", "run.toml", "--seed", "9", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = std::fs::read_to_string(dir.path().join("r/distill.config.toml")).unwrap();
    assert!(resolved.contains("seed = 9"));
    assert!(resolved.contains("steps = 2"));
    assert_eq!(std::fs::read_to_string(dir.path().join("r/distill.csv")).unwrap().lines().count(), 4);
}

#[test]
fn gen_then_fuse_then_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let o = bevlab(&["gen", "--count", "2", "--out", "scenes"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("scenes/manifest.txt").exists());
    assert!(dir.path().join("scenes/scene_000001.boxes.txt").exists());

    let image = "scenes/scene_000000.image.bflt";
    let common = ["--lidar", image, "--image", image, "--set", "clfm.channels=4", "--set", "clfm.heads=2"];
    let run = |out: &str, oracle: bool| {
        let mut args = vec!["fuse", "--out", out];
        args.extend(common);
        if oracle {
            args.push("--oracle");
        }
        let o = bevlab(&args, dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.path().join(out).join("fused.bflt")).unwrap()
    };
    let a = run("f1", false);
    let b = run("f2", false);
    assert_eq!(a, b);
    let c = run("f3", true);
    assert_eq!(a.len(), c.len());
    assert_eq!(a[..8], *b"BFLT0001");
}

#[test]
fn fuse_without_inputs_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bevlab(&["fuse", "--out", "r"], dir.path()).status.code(), Some(2));
}

#[test]
fn tiny_bench_reports_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let o = bevlab(&["bench", "--lengths", "64,128,256", "--quadratic-max", "256", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("r/bench.summary.csv")).unwrap();
    assert!(summary.contains("linear_slope,"));
    assert!(summary.contains("quadratic_slope,"));
    assert_eq!(std::fs::read_to_string(dir.path().join("r/bench.csv")).unwrap().lines().count(), 4);
}
