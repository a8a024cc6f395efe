//! Binary snapshots of a distribution.
//!
//! Layout, all little-endian:
//!
//! | bytes | field            | type |
//! |-------|------------------|------|
//! | 8     | magic `BGKSNAP\0`| raw  |
//! | 8     | version (1)      | u64  |
//! | 8     | dims             | u64  |
//! | 8     | cells_per_axis   | u64  |
//! | 8     | nodes_per_axis   | u64  |
//! | 8     | v_max            | f64  |
//! | 8     | time             | f64  |
//! | 8     | step_count       | u64  |
//! | 8·N   | values           | f64  |
//!
//! Values are stored cell-major, velocity node fastest, with
//! `N = cells_per_axis^dims * nodes_per_axis^3`.

use std::path::Path;
use std::sync::Arc;

use crate::error::{BgkError, Result};
use crate::fields::{DiscreteMaxwellianParams, GridFunction, PhaseSpace};

pub const MAGIC: [u8; 8] = *b"BGKSNAP\0";
pub const VERSION: u64 = 1;
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dims: u64,
    pub cells_per_axis: u64,
    pub nodes_per_axis: u64,
    pub v_max: f64,
    pub time: f64,
    pub step_count: u64,
    pub values: Vec<f64>,
}

fn expected_len(dims: u64, cells: u64, nodes: u64) -> Option<usize> {
    let spatial = cells.checked_pow(u32::try_from(dims).ok()?)?;
    let velocity = nodes.checked_pow(3)?;
    usize::try_from(spatial.checked_mul(velocity)?).ok()
}

impl Snapshot {
    pub fn from_grid_function(f: &GridFunction, time: f64, step_count: u64) -> Self {
        let space = f.space();
        Self {
            dims: space.spatial().dims() as u64,
            cells_per_axis: space.spatial().cells_per_axis() as u64,
            nodes_per_axis: space.velocity().nodes_per_axis() as u64,
            v_max: space.velocity().v_max(),
            time,
            step_count,
            values: f.values().to_vec(),
        }
    }

    /// Wraps the stored values on `space`, which must describe the same grids.
    pub fn to_grid_function(&self, space: &Arc<PhaseSpace>) -> Result<GridFunction> {
        let mismatch = |what: &str, file: String, cfg: String| {
            BgkError::Snapshot(format!("{what} mismatch: snapshot has {file}, grid has {cfg}"))
        };
        let s = space.spatial();
        let v = space.velocity();
        if self.dims != s.dims() as u64 {
            return Err(mismatch("dims", self.dims.to_string(), s.dims().to_string()));
        }
        if self.cells_per_axis != s.cells_per_axis() as u64 {
            return Err(mismatch(
                "cells_per_axis",
                self.cells_per_axis.to_string(),
                s.cells_per_axis().to_string(),
            ));
        }
        if self.nodes_per_axis != v.nodes_per_axis() as u64 {
            return Err(mismatch(
                "nodes_per_axis",
                self.nodes_per_axis.to_string(),
                v.nodes_per_axis().to_string(),
            ));
        }
        if self.v_max.to_bits() != v.v_max().to_bits() {
            return Err(mismatch("v_max", self.v_max.to_string(), v.v_max().to_string()));
        }
        GridFunction::from_values(space, self.values.clone())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(&MAGIC);
        for x in [VERSION, self.dims, self.cells_per_axis, self.nodes_per_axis] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.v_max.to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        out.extend_from_slice(&self.step_count.to_le_bytes());
        for x in &self.values {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(BgkError::Snapshot(format!(
                "truncated header: {} bytes, need {HEADER_LEN}",
                bytes.len()
            )));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().unwrap() };
        if word(0) != MAGIC {
            return Err(BgkError::Snapshot("bad magic".into()));
        }
        let version = u64::from_le_bytes(word(1));
        if version != VERSION {
            return Err(BgkError::Snapshot(format!("unsupported version {version}")));
        }
        let dims = u64::from_le_bytes(word(2));
        let cells_per_axis = u64::from_le_bytes(word(3));
        let nodes_per_axis = u64::from_le_bytes(word(4));
        let v_max = f64::from_le_bytes(word(5));
        let time = f64::from_le_bytes(word(6));
        let step_count = u64::from_le_bytes(word(7));

        if !(1..=3).contains(&dims) {
            return Err(BgkError::Snapshot(format!("dims must be 1, 2 or 3, got {dims}")));
        }
        if cells_per_axis < 2 {
            return Err(BgkError::Snapshot(format!(
                "cells_per_axis must be >= 2, got {cells_per_axis}"
            )));
        }
        if nodes_per_axis < 4 || nodes_per_axis % 2 != 0 {
            return Err(BgkError::Snapshot(format!(
                "nodes_per_axis must be even and >= 4, got {nodes_per_axis}"
            )));
        }
        if !(v_max > 0.0) || !v_max.is_finite() {
            return Err(BgkError::Snapshot(format!("v_max must be positive, got {v_max}")));
        }
        let body = &bytes[HEADER_LEN..];
        let n = expected_len(dims, cells_per_axis, nodes_per_axis)
            .filter(|n| n.checked_mul(8) == Some(body.len()))
            .ok_or_else(|| {
                BgkError::Snapshot(format!(
                    "payload of {} bytes does not match a {dims}D grid with {cells_per_axis} cells and {nodes_per_axis} nodes per axis",
                    body.len()
                ))
            })?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<_>>();
        debug_assert_eq!(values.len(), n);
        Ok(Self {
            dims,
            cells_per_axis,
            nodes_per_axis,
            v_max,
            time,
            step_count,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

pub const WARM_MAGIC: [u8; 8] = *b"BGKWARM\0";

/// Sidecar holding the solver's per-cell Newton starting points: magic,
/// u64 cell count, then `alpha, beta[3], gamma` per cell as f64 LE.
pub fn encode_warm_start(params: &[DiscreteMaxwellianParams]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 40 * params.len());
    out.extend_from_slice(&WARM_MAGIC);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        for x in [p.alpha, p.beta[0], p.beta[1], p.beta[2], p.gamma] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_warm_start(bytes: &[u8]) -> Result<Vec<DiscreteMaxwellianParams>> {
    if bytes.len() < 16 || bytes[..8] != WARM_MAGIC {
        return Err(BgkError::Snapshot("not a warm-start file".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    if usize::try_from(n).ok().and_then(|n| n.checked_mul(40)) != Some(body.len()) {
        return Err(BgkError::Snapshot(format!(
            "warm-start payload of {} bytes does not hold {n} cells",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(40)
        .map(|c| {
            let x: Vec<f64> = c
                .chunks_exact(8)
                .map(|w| f64::from_le_bytes(w.try_into().unwrap()))
                .collect();
            DiscreteMaxwellianParams {
                alpha: x[0],
                beta: [x[1], x[2], x[3]],
                gamma: x[4],
            }
        })
        .collect())
}
