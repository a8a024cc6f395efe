use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bgk::csv_io::parse_diagnostics;
use bgk::diagnostics::fit_decay_rate;
use bgk::fields::{GridFunction, PhaseSpace};
use bgk::grid::{SpatialGrid, VelocityGrid};
use bgk::snapshot::Snapshot;
use serde_json::Value;
use tempfile::TempDir;

fn bgk(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgk"))
        .args(args)
        .current_dir(cwd)
        .env("THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn config(
    dir: &Path,
    name: &str,
    cells: usize,
    kind: &str,
    t_final: f64,
    extra: &str,
) -> PathBuf {
    let text = format!(
        r#"
[grid]
dims = 1
cells_per_axis = {cells}
nodes_per_axis = 16
v_max = 8.0

[physics]
a = 1.0
b = 0.0
q = 12.0
delta = 0.1

[time]
dt = 0.05
t_final = {t_final}

[scenario]
kind = "{kind}"

[output]
checkpoint_every = 7
{extra}
"#
    );
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn files_under(dir: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel);
            }
        }
    }
    out
}

#[test]
fn equilibrium_run_has_constant_columns_and_complete_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "eq.toml", 8, "equilibrium", 0.5, "svg = true");
    let out = bgk(&["run", "--config", cfg.to_str().unwrap(), "--out", "eq"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let run = tmp.path().join("eq");
    let records = parse_diagnostics(&std::fs::read_to_string(run.join("diagnostics.csv")).unwrap()).unwrap();
    assert_eq!(records.len(), 11);
    for r in &records {
        assert!((r.mass - records[0].mass).abs() <= 1e-14);
        assert!((r.energy - records[0].energy).abs() <= 1e-13);
        assert!((r.boltzmann_h - records[0].boltzmann_h).abs() <= 1e-13);
        assert!(r.macro_deviation <= 1e-12);
    }

    let m = manifest(&run);
    assert_eq!(m["status"], "completed");
    let listed: BTreeSet<String> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap().to_string())
        .collect();
    assert_eq!(listed, files_under(&run));
    for flag in ["conservation", "entropy", "decay_fit", "delta_crossing"] {
        assert!(m["pass"][flag].is_boolean(), "{flag}");
    }
    assert_eq!(m["pass"]["conservation"], true);
    assert_eq!(m["config"]["output"]["n_theta"], 32);
    assert_eq!(m["config"]["output"]["record_every"], 1);
}

#[test]
fn invalid_configs_exit_2_and_name_every_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "bad.toml", 8, "equilibrium", 0.5, "");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("a = 1.0", "a = 0.0")
        .replace("b = 0.0", "b = 0.5")
        .replace("dt = 0.05", "dt = 0.0");
    std::fs::write(&cfg, text).unwrap();
    let out = bgk(&["run", "--config", cfg.to_str().unwrap(), "--out", "bad"], tmp.path());
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("a >= b"), "{err}");
    assert!(err.contains("time.dt"), "{err}");
    assert!(!tmp.path().join("bad").exists());

    let missing = tmp.path().join("missing.toml");
    std::fs::write(&missing, "[grid]\ndims = 1\n").unwrap();
    let out = bgk(&["run", "--config", missing.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("physics.delta"));

    assert_eq!(code(&bgk(&["run", "--config", "nowhere.toml"], tmp.path())), 2);
    assert_eq!(code(&bgk(&["frobnicate"], tmp.path())), 2);
}

#[test]
fn existing_runs_are_never_overwritten() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "eq.toml", 4, "equilibrium", 0.2, "");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&bgk(&["run", "--config", cfg, "--out", "r"], tmp.path())), 0);
    let before = std::fs::read(tmp.path().join("r/diagnostics.csv")).unwrap();

    let again = bgk(&["run", "--config", cfg, "--out", "r"], tmp.path());
    assert_eq!(code(&again), 2);
    let resumed = bgk(&["run", "--config", cfg, "--out", "r", "--resume"], tmp.path());
    assert_eq!(code(&resumed), 2);
    assert!(stderr(&resumed).contains("refusing to overwrite"));
    assert_eq!(std::fs::read(tmp.path().join("r/diagnostics.csv")).unwrap(), before);
}

#[test]
fn interrupted_run_resumes_bit_for_bit() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "la.toml", 8, "large-amplitude", 1.0, "");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&bgk(&["run", "--config", cfg, "--out", "full"], tmp.path())), 0);
    let full = tmp.path().join("full");

    // fake a crash after the step-14 checkpoint: a "running" manifest,
    // extra rows past the checkpoint and no final artifacts
    let cut = tmp.path().join("cut");
    std::fs::create_dir(&cut).unwrap();
    for f in ["config.toml", "checkpoint.snap", "checkpoint.warm"] {
        std::fs::copy(full.join(f), cut.join(f)).unwrap();
    }
    let csv = std::fs::read_to_string(full.join("diagnostics.csv")).unwrap();
    let partial: Vec<&str> = csv.lines().take(1 + 17).collect();
    std::fs::write(cut.join("diagnostics.csv"), partial.join("\n") + "\n").unwrap();
    let mut m = manifest(&full);
    m["status"] = "running".into();
    std::fs::write(cut.join("manifest.json"), m.to_string()).unwrap();

    let out = bgk(&["run", "--config", cfg, "--out", "cut", "--resume"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(manifest(&cut)["resumed_from_step"], 14);
    assert_eq!(
        std::fs::read(full.join("diagnostics.csv")).unwrap(),
        std::fs::read(cut.join("diagnostics.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(full.join("final.snap")).unwrap(),
        std::fs::read(cut.join("final.snap")).unwrap()
    );
}

#[test]
fn repeated_runs_write_identical_csv() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "near.toml", 8, "near-equilibrium", 0.5, "");
    let cfg = cfg.to_str().unwrap();
    for dir in ["a", "b"] {
        assert_eq!(code(&bgk(&["run", "--config", cfg, "--out", dir], tmp.path())), 0);
    }
    assert_eq!(
        std::fs::read(tmp.path().join("a/diagnostics.csv")).unwrap(),
        std::fs::read(tmp.path().join("b/diagnostics.csv")).unwrap()
    );
}

#[test]
fn solver_abort_exits_1_and_marks_the_manifest() {
    let tmp = TempDir::new().unwrap();
    // a one-cell spike on a faint background: cubic interpolation
    // undershoots the background, so the neighbours lose their density
    let space = PhaseSpace::new(
        SpatialGrid::new(1, 16).unwrap(),
        VelocityGrid::new(16, 8.0).unwrap(),
    )
    .unwrap();
    let spike = GridFunction::from_fn(&space, |x, v| {
        let m = bgk::fields::eval_maxwellian(1.0, [0.0; 3], 1.0, v);
        if (0.25..0.3125).contains(&x[0]) {
            m
        } else {
            1e-3 * m
        }
    });
    Snapshot::from_grid_function(&spike, 0.0, 0)
        .write(&tmp.path().join("spike.snap"))
        .unwrap();
    let cfg = config(tmp.path(), "spike.toml", 16, "custom", 0.5, "")
        .to_str()
        .unwrap()
        .to_string();
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("kind = \"custom\"", "kind = \"custom\"\nsnapshot = \"spike.snap\"");
    std::fs::write(&cfg, text).unwrap();

    let out = bgk(&["run", "--config", &cfg, "--out", "spike"], tmp.path());
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("run aborted"), "{}", stderr(&out));
    let m = manifest(&tmp.path().join("spike"));
    assert_eq!(m["status"], "aborted");
    assert!(m["error"].as_str().unwrap().contains("density"));
}

#[test]
fn verify_reports_and_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = bgk(&["verify", "--suite", "bogus"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("linearization"));

    let out = bgk(&["verify", "--suite", "hessian", "--seed", "42", "--out", "h.txt"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    assert_eq!(std::fs::read_to_string(tmp.path().join("h.txt")).unwrap(), text);
    let line = text
        .lines()
        .find(|l| l.contains("hessian_max_relative_fd_error"))
        .unwrap();
    let value: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(value <= 1e-5);

    let out = bgk(&["verify", "--suite", "linearization", "--seed", "7"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("overall PASS"));

    let bad_threads = Command::new(env!("CARGO_BIN_EXE_bgk"))
        .args(["verify", "--suite", "hessian"])
        .env("THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&bad_threads), 2);
}

#[test]
fn plot_near_equilibrium_decay_on_log_axis() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "near.toml", 16, "near-equilibrium", 4.0, "");
    assert_eq!(
        code(&bgk(&["run", "--config", cfg.to_str().unwrap(), "--out", "near"], tmp.path())),
        0
    );
    let csv = tmp.path().join("near/diagnostics.csv");
    let out = bgk(
        &["plot", csv.to_str().unwrap(), "--columns", "linf_q", "--log-scale", "--out", "n.svg"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let svg = std::fs::read_to_string(tmp.path().join("n.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(!svg.contains("stroke-dasharray"), "no guide without macro_dev");

    // a straight line on the log axis means an exponential fit with high r^2
    let records = parse_diagnostics(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    let series: Vec<(f64, f64)> = records.iter().map(|r| (r.time, r.linf_q_norm)).collect();
    let fit = fit_decay_rate(&series, 1.0).unwrap();
    assert!(fit.k > 0.0 && fit.r2 >= 0.95, "{fit}");
}

#[test]
fn plot_large_amplitude_draws_the_delta_guide() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "la.toml", 16, "large-amplitude", 2.0, "");
    assert_eq!(
        code(&bgk(&["run", "--config", cfg.to_str().unwrap(), "--out", "la"], tmp.path())),
        0
    );
    let run = tmp.path().join("la");
    let csv = run.join("diagnostics.csv");
    let out = bgk(&["plot", csv.to_str().unwrap(), "--columns", "macro_dev"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let svg = std::fs::read_to_string(run.join("diagnostics.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray"));
    assert!(svg.contains("2 delta = 0.2"));

    // the curve crosses the guide where the regime report says it does
    let records = parse_diagnostics(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    let last_above = records
        .iter()
        .rposition(|r| r.macro_deviation > 0.2)
        .expect("starts above the guide");
    let crossing = records[last_above + 1].time;
    assert!(records[0].macro_deviation > 0.2);
    assert_eq!(manifest(&run)["regime"]["t_delta_crossing"].as_f64(), Some(crossing));
}

#[test]
fn plot_input_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let header = "time,mass,mom_x,mom_y,mom_z,energy,H,rel_entropy,entropy_split,linf_q,macro_dev,pp_ratio\n";
    std::fs::write(tmp.path().join("empty.csv"), header).unwrap();
    let out = bgk(&["plot", "empty.csv"], tmp.path());
    assert_eq!(code(&out), 2);

    let row = "0,1,0,0,0,3,-4,0,0,0.01,0.5,1\n";
    std::fs::write(tmp.path().join("one.csv"), format!("{header}{row}")).unwrap();
    let out = bgk(&["plot", "one.csv", "--columns", "linf_q,bogus"], tmp.path());
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("bogus") && err.contains("macro_dev, pp_ratio"), "{err}");

    assert_eq!(code(&bgk(&["plot", "absent.csv"], tmp.path())), 2);
}

#[test]
fn snapshot_save_load_and_custom_scenario() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "la.toml", 8, "large-amplitude", 0.2, "");
    let cfg = cfg.to_str().unwrap();
    let out = bgk(&["snapshot", "save", "--config", cfg, "--out", "init.snap"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out = bgk(&["snapshot", "load", "init.snap", "--config", cfg], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let mass: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("mass "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((mass - 1.0).abs() < 1e-12, "{text}");

    // a grid mismatch and garbage are both input errors
    let other = config(tmp.path(), "other.toml", 4, "equilibrium", 0.2, "");
    assert_eq!(
        code(&bgk(&["snapshot", "load", "init.snap", "--config", other.to_str().unwrap()], tmp.path())),
        2
    );
    std::fs::write(tmp.path().join("junk.snap"), b"not a snapshot").unwrap();
    assert_eq!(code(&bgk(&["snapshot", "load", "junk.snap"], tmp.path())), 2);

    // the saved state reproduces the built-in scenario
    let custom = config(tmp.path(), "custom.toml", 8, "custom", 0.2, "");
    let text = std::fs::read_to_string(&custom)
        .unwrap()
        .replace("kind = \"custom\"", "kind = \"custom\"\nsnapshot = \"init.snap\"");
    std::fs::write(&custom, text).unwrap();
    for (c, dir) in [(cfg, "builtin"), (custom.to_str().unwrap(), "custom")] {
        assert_eq!(code(&bgk(&["run", "--config", c, "--out", dir], tmp.path())), 0);
    }
    assert_eq!(
        std::fs::read(tmp.path().join("builtin/diagnostics.csv")).unwrap(),
        std::fs::read(tmp.path().join("custom/diagnostics.csv")).unwrap()
    );
}
