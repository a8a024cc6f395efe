use std::path::{Path, PathBuf};

use bgk::csv_io::{parse_table, Table};
use bgk::plot::{Guide, LineChart, Series};

use crate::{emit, runtime, usage, CliError};

/// `delta` recorded in a `manifest.json` next to the CSV, if any.
fn manifest_delta(csv: &Path) -> Option<f64> {
    let path = csv.parent()?.join("manifest.json");
    let text = std::fs::read_to_string(path).ok()?;
    let json: serde_json::Value = serde_json::from_str(&text).ok()?;
    json.pointer("/config/physics/delta")?.as_f64()
}

pub fn chart(
    table: &Table,
    columns: &[String],
    log_y: bool,
    delta: Option<f64>,
) -> Result<LineChart, CliError> {
    if table.rows.is_empty() {
        return Err(usage("CSV has a header but no data rows"));
    }
    let time = table
        .column("time")
        .ok_or_else(|| usage("CSV has no \"time\" column"))?;
    let mut series = Vec::new();
    for name in columns {
        let ys = table.column(name).ok_or_else(|| {
            usage(format!(
                "unknown column {name:?}; available columns: {}",
                table.columns.join(", ")
            ))
        })?;
        series.push(Series {
            name: name.clone(),
            points: time.iter().copied().zip(ys).collect(),
        });
    }
    let guides = match delta {
        Some(d) if columns.iter().any(|c| c == "macro_dev") => vec![Guide {
            label: format!("2 delta = {}", 2.0 * d),
            y: 2.0 * d,
        }],
        _ => Vec::new(),
    };
    Ok(LineChart {
        title: columns.join(", "),
        x_label: "time".into(),
        log_y,
        series,
        guides,
    })
}

pub fn cmd_plot(
    csv: &Path,
    columns: &[String],
    out: Option<PathBuf>,
    log_scale: bool,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(csv)
        .map_err(|e| usage(format!("cannot read {}: {e}", csv.display())))?;
    let table = parse_table(&text).map_err(usage)?;
    let columns: Vec<String> = columns
        .iter()
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect();
    if columns.is_empty() {
        return Err(usage("no columns requested"));
    }
    let chart = chart(&table, &columns, log_scale, manifest_delta(csv))?;
    let svg = chart.to_svg().map_err(usage)?;
    let out = out.unwrap_or_else(|| csv.with_extension("svg"));
    std::fs::write(&out, svg).map_err(runtime)?;
    emit(&format!("wrote {}\n", out.display()));
    Ok(())
}
