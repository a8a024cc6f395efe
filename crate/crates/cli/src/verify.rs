use std::path::Path;

use bgk::verify::{run_suite, Suite};

use crate::{emit, runtime, CliError};

pub fn cmd_verify(suite: Suite, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let report = run_suite(suite, seed).map_err(runtime)?;
    let text = report.to_text();
    emit(&text);
    if let Some(path) = out {
        std::fs::write(path, &text).map_err(runtime)?;
    }
    if report.pass() {
        Ok(())
    } else {
        Err(runtime(format!("suite {:?} failed", suite.name())))
    }
}
