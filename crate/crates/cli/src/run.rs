//! `bgk run`: one scenario, one directory of artifacts.
//!
//! The run directory always holds `manifest.json`. It is written with
//! status `running` before the first step, `aborted` if the solver fails and
//! `completed` at the end. A checkpoint is written every
//! `output.checkpoint_every` steps so that `--resume` can pick up an
//! interrupted run; a completed run is never overwritten.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bgk::config::SimConfig;
use bgk::csv_io::{parse_diagnostics, parse_table, DiagnosticsWriter};
use bgk::diagnostics::{DecayFit, DiagnosticsRecord, CSV_COLUMNS};
use bgk::snapshot::{decode_warm_start, encode_warm_start, Snapshot};
use bgk::solver::{initial_state, phase_space, run_from, RunOutput, SolverState};
use bgk::verify::{record_checks, Bound, Check};
use serde_json::{json, Value};

use crate::plot::chart;
use crate::{emit, runtime, usage, CliError};

pub const MANIFEST: &str = "manifest.json";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const CHECKPOINT: &str = "checkpoint.snap";
pub const CHECKPOINT_WARM: &str = "checkpoint.warm";
pub const FINAL: &str = "final.snap";
pub const REGIME: &str = "regime.txt";
pub const DECAY_FIT: &str = "decay_fit.txt";
pub const CONFIG_ECHO: &str = "config.toml";

/// Columns drawn on a log axis when SVGs are requested.
const LOG_COLUMNS: [&str; 3] = ["linf_q", "macro_dev", "rel_entropy"];

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

fn read_manifest(dir: &Path) -> Result<Option<Value>, CliError> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(runtime)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| usage(format!("{} is not valid JSON: {e}", path.display())))
}

struct Manifest {
    dir: PathBuf,
    config: Value,
    artifacts: Vec<String>,
    timings: serde_json::Map<String, Value>,
    resumed_from_step: Option<u64>,
}

impl Manifest {
    fn add(&mut self, name: &str) {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
    }

    fn write(&self, status: &str, extra: Value) -> Result<(), CliError> {
        let mut artifacts = self.artifacts.clone();
        artifacts.insert(0, MANIFEST.to_string());
        let mut doc = json!({
            "tool": "bgk",
            "version": env!("CARGO_PKG_VERSION"),
            "status": status,
            "config": self.config,
            "artifacts": artifacts,
            "timings_s": self.timings,
            "resumed_from_step": self.resumed_from_step,
        });
        if let (Value::Object(doc), Value::Object(extra)) = (&mut doc, extra) {
            doc.extend(extra);
        }
        let text = serde_json::to_string_pretty(&doc).map_err(runtime)?;
        write_atomic(&self.dir.join(MANIFEST), text.as_bytes()).map_err(runtime)
    }
}

fn check_json(c: &Check) -> Value {
    let bound = match c.bound {
        Bound::AtMost => "at_most",
        Bound::AtLeast => "at_least",
        Bound::Info => "info",
    };
    json!({
        "property": c.property,
        "value": c.value,
        "bound": bound,
        "tolerance": c.tolerance,
        "pass": c.pass(),
    })
}

fn decay_text(decay: &Result<DecayFit, String>) -> String {
    match decay {
        Ok(fit) => fit.to_string(),
        Err(e) => format!("fit failed: {e}\n"),
    }
}

/// Config echo with the run directory blanked, so a moved or copied run
/// directory can still be resumed.
fn without_dir(config: &Value) -> Value {
    let mut c = config.clone();
    if let Some(out) = c.get_mut("output").and_then(Value::as_object_mut) {
        out.remove("dir");
    }
    c
}

/// Loads the checkpoint and the diagnostics rows recorded up to it.
fn resume_point(
    dir: &Path,
    cfg: &SimConfig,
) -> Result<Option<(SolverState, Vec<DiagnosticsRecord>)>, CliError> {
    let ck = dir.join(CHECKPOINT);
    if !ck.exists() {
        return Ok(None);
    }
    let snap = Snapshot::read(&ck).map_err(usage)?;
    let space = phase_space(cfg).map_err(usage)?;
    let f = snap.to_grid_function(&space).map_err(usage)?;
    let mut state = SolverState::new(f, snap.time, snap.step_count).map_err(usage)?;
    // without the sidecar the run still resumes, only not bit for bit
    if let Ok(bytes) = std::fs::read(dir.join(CHECKPOINT_WARM)) {
        let warm = decode_warm_start(&bytes).map_err(usage)?;
        state.set_warm_start(warm).map_err(usage)?;
    } else {
        log::warn!("no {CHECKPOINT_WARM} next to the checkpoint; starting Newton from mu");
    }
    let text = std::fs::read_to_string(dir.join(DIAGNOSTICS)).map_err(usage)?;
    let records: Vec<DiagnosticsRecord> = parse_diagnostics(&text)
        .map_err(usage)?
        .into_iter()
        .filter(|r| r.time <= snap.time * (1.0 + 1e-12))
        .collect();
    if records.is_empty() {
        return Err(usage(format!(
            "{} has no rows up to the checkpoint at t = {}",
            dir.join(DIAGNOSTICS).display(),
            snap.time
        )));
    }
    Ok(Some((state, records)))
}

pub fn cmd_run(config: &Path, out: Option<PathBuf>, resume: bool) -> Result<(), CliError> {
    let setup_start = Instant::now();
    let mut cfg = SimConfig::from_path(config).map_err(usage)?;
    let dir = out
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("run-{}", cfg.scenario.name())));
    cfg.output.dir = Some(dir.clone());
    let config_json = serde_json::to_value(&cfg).map_err(runtime)?;

    let resumed = match (read_manifest(&dir)?, resume) {
        (Some(_), false) => {
            return Err(usage(format!(
                "{} already holds a run; pass --resume to continue it or choose another --out",
                dir.display()
            )))
        }
        (Some(m), true) => {
            if m.get("status").and_then(Value::as_str) == Some("completed") {
                return Err(usage(format!(
                    "run in {} is already complete; refusing to overwrite its artifacts",
                    dir.display()
                )));
            }
            if m.get("config").map(without_dir) != Some(without_dir(&config_json)) {
                return Err(usage(format!(
                    "config differs from the one recorded in {}",
                    dir.join(MANIFEST).display()
                )));
            }
            resume_point(&dir, &cfg)?
        }
        (None, _) => None,
    };
    std::fs::create_dir_all(&dir).map_err(runtime)?;

    let (state, records) = match resumed {
        Some(r) => r,
        None => {
            let space = phase_space(&cfg).map_err(usage)?;
            (initial_state(&cfg, &space).map_err(usage)?, Vec::new())
        }
    };
    let mut manifest = Manifest {
        dir: dir.clone(),
        config: config_json,
        artifacts: Vec::new(),
        timings: serde_json::Map::new(),
        resumed_from_step: (!records.is_empty()).then_some(state.step_count),
    };
    write_atomic(&dir.join(CONFIG_ECHO), cfg.to_toml_string().as_bytes()).map_err(runtime)?;
    manifest.add(CONFIG_ECHO);
    manifest.add(DIAGNOSTICS);

    let file = File::create(dir.join(DIAGNOSTICS)).map_err(runtime)?;
    let mut writer = DiagnosticsWriter::new(BufWriter::new(file)).map_err(runtime)?;
    for r in &records {
        writer.write(r).map_err(runtime)?;
    }
    writer.flush().map_err(runtime)?;
    manifest
        .timings
        .insert("setup".into(), json!(setup_start.elapsed().as_secs_f64()));
    manifest.write("running", json!({}))?;

    let solve_start = Instant::now();
    let n_steps = cfg.n_steps();
    let checkpoint_every = cfg.output.checkpoint_every;
    let mut wrote_checkpoint = false;
    let result: bgk::Result<RunOutput> = {
        let mut observer = |st: &SolverState, rec: Option<&DiagnosticsRecord>| -> bgk::Result<()> {
            if let Some(r) = rec {
                writer.write(r)?;
            }
            if st.step_count > 0 && st.step_count % checkpoint_every == 0 && st.step_count < n_steps {
                writer.flush()?;
                let snap = Snapshot::from_grid_function(&st.f, st.time, st.step_count);
                write_atomic(&dir.join(CHECKPOINT_WARM), &encode_warm_start(st.warm_start()))?;
                write_atomic(&dir.join(CHECKPOINT), &snap.encode())?;
                wrote_checkpoint = true;
            }
            Ok(())
        };
        run_from(&cfg, state, records, &mut observer)
    };
    let flushed = writer.flush();
    if wrote_checkpoint || dir.join(CHECKPOINT).exists() {
        manifest.add(CHECKPOINT);
        manifest.add(CHECKPOINT_WARM);
    }
    manifest
        .timings
        .insert("solve".into(), json!(solve_start.elapsed().as_secs_f64()));

    let out = match result.and_then(|o| flushed.map(|_| o)) {
        Ok(o) => o,
        Err(e) => {
            manifest.write("aborted", json!({ "error": e.to_string() }))?;
            return Err(runtime(format!("run aborted: {e}")));
        }
    };

    let output_start = Instant::now();
    Snapshot::from_grid_function(&out.state.f, out.state.time, out.state.step_count)
        .write(&dir.join(FINAL))
        .map_err(runtime)?;
    manifest.add(FINAL);
    write_atomic(&dir.join(REGIME), out.regime.to_string().as_bytes()).map_err(runtime)?;
    manifest.add(REGIME);
    write_atomic(&dir.join(DECAY_FIT), decay_text(&out.decay).as_bytes()).map_err(runtime)?;
    manifest.add(DECAY_FIT);
    if cfg.output.svg {
        for name in write_svgs(&dir, cfg.physics.delta)? {
            manifest.add(&name);
        }
    }
    manifest
        .timings
        .insert("output".into(), json!(output_start.elapsed().as_secs_f64()));

    let checks = record_checks(&out.records);
    let group = |names: &[&str]| {
        checks
            .iter()
            .filter(|c| names.iter().any(|n| c.property == *n))
            .all(Check::pass)
    };
    let conservation = group(&["mass_relative_drift", "energy_relative_drift", "momentum_absolute_drift"]);
    let entropy = group(&[
        "max_h_increase_between_records",
        "max_relative_entropy_increase",
        "entropy_split_minus_initial",
    ]);
    let decay_fit = matches!(&out.decay, Ok(f) if f.k > 0.0 && f.r2 >= 0.95);
    let delta_crossing = out.regime.t_delta_crossing.is_some();
    manifest.write(
        "completed",
        json!({
            "steps": out.state.step_count,
            "final_time": out.state.time,
            "records": out.records.len(),
            "clamped_mass": out.clamped_mass,
            "regime": out.regime,
            "decay_fit": out.decay.as_ref().ok(),
            "decay_fit_error": out.decay.as_ref().err(),
            "checks": checks.iter().map(check_json).collect::<Vec<_>>(),
            "pass": {
                "conservation": conservation,
                "entropy": entropy,
                "decay_fit": decay_fit,
                "delta_crossing": delta_crossing,
            },
        }),
    )?;

    let mut summary = format!("{}{}", out.regime, decay_text(&out.decay));
    for c in &checks {
        summary += &format!("{c}\n");
    }
    summary += &format!("artifacts in {}\n", dir.display());
    emit(&summary);
    Ok(())
}

/// One chart per diagnostics column, under `plots/`.
fn write_svgs(dir: &Path, delta: f64) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(dir.join(DIAGNOSTICS)).map_err(runtime)?;
    let table = parse_table(&text).map_err(runtime)?;
    std::fs::create_dir_all(dir.join("plots")).map_err(runtime)?;
    let mut names = Vec::new();
    for col in CSV_COLUMNS.iter().filter(|c| **c != "time") {
        let columns = [col.to_string()];
        let log_y = LOG_COLUMNS.contains(col);
        let svg = match chart(&table, &columns, log_y, Some(delta))?.to_svg() {
            Ok(svg) => svg,
            // a column with no positive values cannot go on a log axis
            Err(_) if log_y => chart(&table, &columns, false, Some(delta))?
                .to_svg()
                .map_err(runtime)?,
            Err(e) => return Err(runtime(e)),
        };
        let name = format!("plots/{col}.svg");
        write_atomic(&dir.join(&name), svg.as_bytes()).map_err(runtime)?;
        names.push(name);
    }
    Ok(names)
}
