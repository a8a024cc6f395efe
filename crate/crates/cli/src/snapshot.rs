use std::fmt::Write as _;
use std::path::Path;

use bgk::config::SimConfig;
use bgk::diagnostics::conserved_totals;
use bgk::fields::{GridFunction, PhaseSpace};
use bgk::grid::{SpatialGrid, VelocityGrid};
use bgk::snapshot::Snapshot;
use bgk::solver::{initial_state, phase_space};

use crate::{emit, runtime, usage, CliError};

pub fn cmd_save(config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = SimConfig::from_path(config).map_err(usage)?;
    let space = phase_space(&cfg).map_err(usage)?;
    let state = initial_state(&cfg, &space).map_err(usage)?;
    Snapshot::from_grid_function(&state.f, state.time, state.step_count)
        .write(out)
        .map_err(runtime)?;
    emit(&format!("wrote {} ({} scenario)\n", out.display(), cfg.scenario.name()));
    Ok(())
}

pub fn cmd_load(path: &Path, config: Option<&Path>) -> Result<(), CliError> {
    let snap = Snapshot::read(path).map_err(usage)?;
    let space = match config {
        Some(c) => phase_space(&SimConfig::from_path(c).map_err(usage)?).map_err(usage)?,
        None => PhaseSpace::new(
            SpatialGrid::new(snap.dims as usize, snap.cells_per_axis as usize).map_err(usage)?,
            VelocityGrid::new(snap.nodes_per_axis as usize, snap.v_max).map_err(usage)?,
        )
        .map_err(usage)?,
    };
    let f: GridFunction = snap.to_grid_function(&space).map_err(usage)?;
    let totals = conserved_totals(&f);
    let min = f.values().iter().copied().fold(f64::INFINITY, f64::min);
    let mut text = String::new();
    let _ = writeln!(text, "dims {}", snap.dims);
    let _ = writeln!(text, "cells_per_axis {}", snap.cells_per_axis);
    let _ = writeln!(text, "nodes_per_axis {}", snap.nodes_per_axis);
    let _ = writeln!(text, "v_max {:e}", snap.v_max);
    let _ = writeln!(text, "time {:.16e}", snap.time);
    let _ = writeln!(text, "step_count {}", snap.step_count);
    let _ = writeln!(text, "mass {:.16e}", totals[0]);
    let _ = writeln!(
        text,
        "momentum {:.16e} {:.16e} {:.16e}",
        totals[1], totals[2], totals[3]
    );
    let _ = writeln!(text, "energy {:.16e}", totals[4]);
    let _ = writeln!(text, "min_value {min:.16e}");
    emit(&text);
    Ok(())
}
