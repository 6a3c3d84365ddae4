use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anil-lab"))
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const GRADCHECK: &str = r#"{
  "experiment": "gradcheck",
  "family": { "geometry": "strongly_convex", "mu": 1.0, "smoothness_l": 2.0, "n_w": 2, "n_phi": 2, "seed": 1 },
  "gradcheck": { "num_tasks": 5, "n_values": [0, 2] }
}"#;

#[test]
fn gradcheck_writes_artifacts_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.json", GRADCHECK);
    let out = dir.path().join("out");
    let status = bin()
        .args(["gradcheck", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in ["results.csv", "summary.txt", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let replayed = bin()
        .args(["replay", "--manifest"])
        .arg(out.join("manifest.json"))
        .arg("--out")
        .arg(dir.path().join("again"))
        .output()
        .unwrap();
    assert_eq!(
        replayed.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&replayed.stderr)
    );
}

#[test]
fn seed_flag_changes_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.json", GRADCHECK);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let s = bin()
            .args(["gradcheck", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(s.code(), Some(0));
        std::fs::read_to_string(out.join("manifest.json")).unwrap()
    };
    assert_ne!(run("1", "a"), run("2", "b"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"experiment":"gradcheck","family":{"geometry":"strongly_convex","mu":5,"smoothness_l":2,"n_w":2,"n_phi":2}}"#,
    );
    let out = bin().args(["gradcheck", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("family"));

    let good = write(dir.path(), "g.json", GRADCHECK);
    let out = bin().args(["sweep", "--config"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["gradcheck", "--config"])
        .arg(dir.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_trend_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{
  "experiment": "sweep",
  "family": { "geometry": "strongly_convex", "mu": 1.0, "smoothness_l": 2.0, "n_w": 2, "n_phi": 2, "seed": 3 },
  "outer": { "beta_w": 0.1, "beta_phi": 0.1, "batch_size": 4, "max_outer_iters": 2,
             "inner": { "alpha": 0.25, "num_steps": 1 } },
  "n_sweep": [1, 2],
  "epsilon_target": 1e-12,
  "eval_pool_size": 8,
  "sweep_checks": ["iterations_non_increasing"]
}"#,
    );
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn divergence_outside_a_sweep_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{
  "experiment": "compare_maml",
  "family": { "geometry": "strongly_convex", "mu": 1.0, "smoothness_l": 2.0, "n_w": 2, "n_phi": 2, "seed": 3,
              "operating_radius": null },
  "outer": { "beta_w": 1e3, "beta_phi": 1e3, "batch_size": 4, "max_outer_iters": 500,
             "inner": { "alpha": 0.25, "num_steps": 2 } },
  "epsilon_target": 1e-12,
  "eval_pool_size": 8
}"#,
    );
    let out = bin()
        .args(["compare-maml", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
}
