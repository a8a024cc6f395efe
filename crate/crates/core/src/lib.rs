pub mod config;
pub mod csv_io;
pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod grid;
pub mod linearization;
pub mod plot;
pub mod snapshot;
pub mod solver;
pub mod verify;

pub use error::{BgkError, Result};
