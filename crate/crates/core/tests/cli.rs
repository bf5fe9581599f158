use std::path::Path;
use std::process::Command;

use glrl_lab::expcli::config::ExperimentConfig;
use glrl_lab::expcli::output::read_matrix;
use glrl_lab::expcli::{run, Algorithm, LossChoice, SchemeChoice};

fn glrl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glrl"))
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn small_gd(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dim = 6;
    cfg.rank = 2;
    cfg.frob_norm = 6.0;
    cfg.observe_prob = 0.7;
    cfg.scheme = SchemeChoice::Rk4;
    cfg.step = 1e-2;
    cfg.horizon = 20.0;
    cfg.record_every = 7;
    cfg.out_dir = out.to_string_lossy().into_owned();
    cfg
}

#[test]
fn zero_observation_probability_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let status = glrl()
        .args(["run-gd", "--observe-prob", "0", "--out-dir"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(3));
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "dim = 4\nbogus = 1\n").unwrap();
    let out = glrl().arg("run-gd").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn divergence_exits_with_code_two_and_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("div");
    let status = glrl()
        .args([
            "run-gd", "--depth", "4", "--dim", "4", "--rank", "1", "--loss", "full", "--init", "identity",
            "--init-scale", "1", "--scheme", "euler", "--step", "10", "--horizon", "1e4", "--out-dir",
        ])
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
    let summary = read_csv(&out.join("summary.csv"));
    assert_eq!(summary[0][5], "diverged");
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let mut cfg = small_gd(&dir.path().join(name));
        cfg.save_states = true;
        run(&cfg).unwrap();
        let files: Vec<Vec<u8>> = ["trajectory.csv", "states.csv", "summary.csv", "estimate.csv"]
            .iter()
            .map(|f| std::fs::read(dir.path().join(name).join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn trajectory_rows_match_recording_rule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_gd(&dir.path().join("gd"));
    let out = run(&cfg).unwrap();
    let steps = out.summary[0].steps.unwrap();
    let rows = read_csv(&out.dir.join("trajectory.csv"));
    assert_eq!(steps, 2000);
    assert_eq!(rows.len(), steps.div_ceil(cfg.record_every) + 1);
    assert_eq!(rows[0].len(), 3 + 2 * cfg.dim);

    let mut g = small_gd(&dir.path().join("glrl"));
    g.algorithm = Algorithm::Glrl;
    g.horizon = f64::INFINITY;
    g.epsilon = 1e-8;
    g.record_every = 13;
    let out = run(&g).unwrap();
    for row in out.summary.iter().filter(|r| r.steps.is_some()) {
        let file = out.dir.join(format!("trajectory_rank{}.csv", row.rank.unwrap()));
        assert_eq!(read_csv(&file).len(), row.steps.unwrap().div_ceil(13) + 1);
    }
}

#[test]
fn glrl_on_rank3_completion_takes_three_phases() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("glrl");
    let status = glrl()
        .args([
            "run-glrl", "--seed", "0", "--dim", "10", "--rank", "3", "--frob-norm", "10", "--observe-prob", "0.6",
            "--scheme", "rk4", "--step", "5e-3", "--epsilon", "1e-10", "--record-every", "100",
            "--reference", "ground-truth", "--out-dir",
        ])
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let summary = read_csv(&out.join("summary.csv"));
    assert_eq!(summary.len(), 4);
    assert_eq!(summary[3][5], "exit");
    assert!(summary.iter().all(|r| r[11] == "true"));
    let test_loss: f64 = summary[3][10].parse().unwrap();
    assert!(test_loss < 1e-10, "test loss {test_loss}");
    let traj = read_csv(&out.join("trajectory_rank3.csv"));
    let last_dist: f64 = traj.last().unwrap().last().unwrap().parse().unwrap();
    assert!(last_dist < 1e-5);
    let toml = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(toml.contains("rng = \"chacha8-v1\""));
    assert!(toml.contains("algorithm = \"glrl\""));
}

#[test]
fn nuclear_min_on_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.algorithm = Algorithm::NuclearMin;
    cfg.loss = LossChoice::Counterexample;
    cfg.out_dir = dir.path().join("nm").to_string_lossy().into_owned();
    let out = run(&cfg).unwrap();
    let nuc = out.summary[0].nuclear_norm.unwrap();
    assert!((nuc - 400.0).abs() < 1e-3, "nuclear norm {nuc}");
    assert_eq!(read_matrix(&out.dir.join("estimate.csv")).unwrap(), out.estimate);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r1");
    let cfg_path = dir.path().join("c.toml");
    std::fs::write(&cfg_path, "dim = 5\nrank = 2\nobserve_prob = 0.9\nseed = 3\n").unwrap();
    let status = glrl()
        .args(["run-baseline", "--method", "r1mp", "--seed", "4", "--set", "frob_norm=5", "--config"])
        .arg(&cfg_path)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let resolved = ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(resolved.dim, 5);
    assert_eq!(resolved.seed, 4);
    assert_eq!(resolved.frob_norm, 5.0);
    assert_eq!(resolved.algorithm, Algorithm::R1mp);
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = glrl()
        .env("GLRL_OUT", dir.path())
        .args(["gen", "--seed", "9", "--dim", "5", "--rank", "1"])
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let run_dir = dir.path().join("gd-seed9");
    assert!(run_dir.join("loss.txt").exists());
    let w = read_matrix(&run_dir.join("ground_truth.csv")).unwrap();
    assert_eq!(w.numerical_rank(1e-10).unwrap(), 1);
}

#[test]
fn analyze_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_gd(&dir.path().join("gd"));
    cfg.save_states = true;
    run(&cfg).unwrap();
    let out = glrl()
        .args(["analyze", "distance", "--states"])
        .arg(dir.path().join("gd/states.csv"))
        .arg("--reference")
        .arg(dir.path().join("gd/ground_truth.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("max "));

    let table = dir.path().join("pts.csv");
    std::fs::write(&table, "alpha,value\n1e-2,3e-4\n1e-3,3e-6\n1e-4,3e-8\n").unwrap();
    let out = glrl().args(["analyze", "slope", "--x", "alpha", "--y", "value", "--input"]).arg(&table).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("slope 2.000000"));

    glrl().args(["gen", "--dim", "3", "--rank", "1", "--out-dir"]).arg(dir.path().join("g")).output().unwrap();
    let out = glrl().args(["analyze", "spectrum", "--loss"]).arg(dir.path().join("g/loss.txt")).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.contains(',')).count(), 1 + 6);
    assert!(text.contains("antisymmetric zeros: 3"));
}

#[test]
fn counterexample_and_deep_escape_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = glrl()
        .args(["counterexample-4x4", "--r", "10", "--scales", "1e-3", "--out"])
        .arg(dir.path().join("ce"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let rows = read_csv(&dir.path().join("ce/summary.csv"));
    let nuc: f64 = rows[1][2].parse().unwrap();
    assert!((nuc - 202.0).abs() < 1e-9);

    let out = glrl()
        .args(["deep-escape", "--seeds", "2", "--out"])
        .arg(dir.path().join("de"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("first to blow up: index 2"));
    assert_eq!(read_csv(&dir.path().join("de/runs.csv")).len(), 4);
}
