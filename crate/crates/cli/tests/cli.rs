use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lcrl::config::ExperimentConfig;
use lcrl::presets;

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn lcrl(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcrl"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes `cfg` to a TOML file in `dir`.
fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

/// Value printed after `label` on its own line.
fn printed(text: &str, label: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("no {label:?} in {text}"));
    line[label.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn shipped_preset_matches_the_builtin_configuration() {
    let cfg = ExperimentConfig::load(&example("paper_lq3d.toml")).unwrap();
    assert_eq!(cfg, presets::paper_lq3d());
    for name in ["paper_lq3d_m0_1.toml", "scalar_lq.toml", "scalar_l1.toml", "jump_diffusion.toml"] {
        let cfg = ExperimentConfig::load(&example(name)).unwrap();
        assert!(cfg.instance().validate().is_empty(), "{name}");
    }
}

#[test]
fn riccati_writes_the_solution_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let o = lcrl(&["riccati"], &example("paper_lq3d.toml"), dir.path());
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!((printed(&text, "P(0) Frobenius norm:") - 1.231764).abs() < 1e-5, "{text}");
    let csv = fs::read_to_string(dir.path().join("riccati.csv")).unwrap();
    assert!(csv.starts_with("t,p_11,p_12,p_13,"));
    assert_eq!(csv.lines().count(), 102);
    assert!(dir.path().join("policy.json").exists());
}

#[test]
fn zero_horizon_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = presets::paper_lq3d();
    cfg.sim.horizon = 0.0;
    let path = write_config(dir.path(), "bad.toml", &cfg);
    let o = lcrl(&["riccati"], &path, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{o:?}");
}

#[test]
fn invalid_grids_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = presets::scalar_lq();
    cfg.decouple.as_mut().unwrap().dx = 0.0;
    let path = write_config(dir.path(), "bad_dx.toml", &cfg);
    assert_eq!(lcrl(&["decouple"], &path, dir.path()).status.code(), Some(2));

    let mut cfg = presets::scalar_lq();
    cfg.sim.steps = 0;
    let path = write_config(dir.path(), "bad_steps.toml", &cfg);
    assert_eq!(lcrl(&["simulate"], &path, dir.path()).status.code(), Some(2));

    let o = lcrl(&["riccati"], &dir.path().join("missing.toml"), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn state_overflow_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = presets::scalar_lq();
    cfg.model.a[(0, 0)] = 1e60;
    cfg.sim.x0[0] = 1.0;
    cfg.sim.steps = 10;
    let path = write_config(dir.path(), "explode.toml", &cfg);
    let policy = dir.path().join("zero.json");
    fs::write(&policy, r#"{"kind":"constant","value":[0.0]}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lcrl"))
        .args(["simulate", "--policy"])
        .arg(&policy)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = presets::paper_lq3d();
    cfg.gls.as_mut().unwrap().num_updates = 5;
    cfg.sim.episodes = 3;
    let path = write_config(dir.path(), "small.toml", &cfg);
    for cmd in ["gls", "simulate", "concentration"] {
        let (a, b) = (dir.path().join(format!("{cmd}_a")), dir.path().join(format!("{cmd}_b")));
        let args = [cmd, "--seed", "7", "--runs", "3"];
        let args = if cmd == "gls" { &args[..] } else { &args[..3] };
        assert!(lcrl(args, &path, &a).status.success(), "{cmd}");
        assert!(lcrl(args, &path, &b).status.success(), "{cmd}");
        let (fa, fb) = (files(&a), files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{cmd} outputs differ");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = presets::paper_lq3d();
    cfg.gls.as_mut().unwrap().num_updates = 4;
    let path = write_config(dir.path(), "small.toml", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(lcrl(&["gls", "--runs", "2", "--threads", "1"], &path, &a).status.success());
    assert!(lcrl(&["gls", "--runs", "2", "--threads", "3"], &path, &b).status.success());
    assert_eq!(files(&a), files(&b));
}

#[test]
fn learning_from_the_truth_has_zero_regret() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = presets::paper_lq3d();
    let gls = cfg.gls.as_mut().unwrap();
    gls.a0 = cfg.model.a.clone();
    gls.b0 = cfg.model.b.clone();
    gls.num_updates = 1;
    let path = write_config(dir.path(), "truth.toml", &cfg);
    let o = lcrl(&["gls"], &path, dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("regret slope: undefined"));
    let csv = fs::read_to_string(dir.path().join("regret.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(fields[1..].iter().all(|&v| v == 0.0), "{line}");
    }
}

#[test]
fn eval_reports_the_riccati_value_and_nonnegative_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let config = example("paper_lq3d.toml");
    let o = lcrl(&["eval"], &config, dir.path());
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!((printed(&text, "expected cost:") - 0.522996).abs() < 1e-5, "{text}");
    assert!(printed(&text, "gap:").abs() < 1e-8);

    // the policy file written by `riccati` evaluates to the same cost
    assert!(lcrl(&["riccati"], &config, dir.path()).status.success());
    let policy = dir.path().join("policy.json");
    let o = Command::new(env!("CARGO_BIN_EXE_lcrl"))
        .args(["eval", "--policy"])
        .arg(&policy)
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(printed(&stdout(&o), "expected cost:"), printed(&text, "expected cost:"));

    // the zero policy is suboptimal
    let zero = dir.path().join("zero.json");
    fs::write(&zero, r#"{"kind":"constant","value":[0.0, 0.0, 0.0]}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lcrl"))
        .args(["eval", "--policy"])
        .arg(&zero)
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert!(printed(&stdout(&o), "gap:") > 0.0);
}

#[test]
fn eval_of_zero_cost_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = presets::scalar_lq();
    if let lcrl::CostSpec::Lq(c) = &mut cfg.cost {
        c.q[(0, 0)] = 0.0;
    }
    let path = write_config(dir.path(), "free.toml", &cfg);
    let zero = dir.path().join("zero.json");
    fs::write(&zero, r#"{"kind":"constant","value":[0.0]}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lcrl"))
        .args(["eval", "--policy"])
        .arg(&zero)
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    assert_eq!(printed(&stdout(&o), "expected cost:"), 0.0);
}

#[test]
fn decouple_matches_riccati_and_finds_the_dead_zone() {
    let dir = tempfile::tempdir().unwrap();
    let o = lcrl(&["decouple"], &example("scalar_lq.toml"), dir.path());
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("max relative deviation")).unwrap();
    let dev: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(dev < 1e-2, "{text}");
    let header = fs::read_to_string(dir.path().join("field.csv")).unwrap();
    assert!(header.starts_with("t,x,v,psi\n"));

    let l1 = dir.path().join("l1");
    let o = lcrl(&["decouple", "--seed", "1"], &example("scalar_l1.toml"), &l1);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("zero-control nodes at t = 0:")).unwrap();
    let count: usize = line.split_whitespace().nth(6).unwrap().parse().unwrap();
    assert!(count >= 3, "{text}");
}

#[test]
fn jump_diffusion_simulation_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = lcrl(&["simulate", "--seed", "3"], &example("jump_diffusion.toml"), dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(dir.path().join("stats.json").exists());
}
