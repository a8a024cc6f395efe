//! Periodic spatial grid, truncated velocity lattice and the collision
//! invariant basis.
//!
//! The velocity lattice is a cell-centered uniform grid on the cube
//! `[-v_max, v_max]^3`. Node coordinates along each axis are built from their
//! positive halves and negated, so `v -> -v` maps nodes onto nodes with exact
//! bit equality.

use crate::error::{BgkError, Result};

/// Truncated uniform velocity lattice with midpoint quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    nodes_per_axis: usize,
    v_max: f64,
    axis: Vec<f64>,
    nodes: Vec<[f64; 3]>,
    weight: f64,
}

impl VelocityGrid {
    pub fn new(nodes_per_axis: usize, v_max: f64) -> Result<Self> {
        if nodes_per_axis < 4 || nodes_per_axis % 2 != 0 {
            return Err(BgkError::InvalidGrid(format!(
                "nodes_per_axis must be even and >= 4, got {nodes_per_axis}"
            )));
        }
        if !(v_max > 0.0) || !v_max.is_finite() {
            return Err(BgkError::InvalidGrid(format!(
                "v_max must be positive and finite, got {v_max}"
            )));
        }
        let dv = 2.0 * v_max / nodes_per_axis as f64;
        let half = nodes_per_axis / 2;
        let positive: Vec<f64> = (0..half).map(|j| (j as f64 + 0.5) * dv).collect();
        let axis: Vec<f64> = positive
            .iter()
            .rev()
            .map(|&x| -x)
            .chain(positive.iter().copied())
            .collect();

        let mut nodes = Vec::with_capacity(nodes_per_axis.pow(3));
        for &x in &axis {
            for &y in &axis {
                for &z in &axis {
                    nodes.push([x, y, z]);
                }
            }
        }
        Ok(Self {
            nodes_per_axis,
            v_max,
            axis,
            nodes,
            weight: dv * dv * dv,
        })
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Node spacing along one axis.
    pub fn spacing(&self) -> f64 {
        2.0 * self.v_max / self.nodes_per_axis as f64
    }

    /// Coordinates along a single axis, ascending.
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Uniform quadrature weight (cell volume) of every node.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Index of the node holding `-v` for the node at `index`.
    pub fn mirror(&self, index: usize) -> usize {
        self.len() - 1 - index
    }

    /// Index of the node with the largest speed (any corner of the lattice).
    pub fn corner_index(&self) -> usize {
        self.len() - 1
    }
}

/// Periodic grid on the unit torus in 1, 2 or 3 dimensions.
///
/// Linear cell index is `c0 + n * (c1 + n * c2)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialGrid {
    dims: usize,
    cells_per_axis: usize,
}

impl SpatialGrid {
    pub fn new(dims: usize, cells_per_axis: usize) -> Result<Self> {
        if !(1..=3).contains(&dims) {
            return Err(BgkError::InvalidGrid(format!(
                "spatial dims must be 1, 2 or 3, got {dims}"
            )));
        }
        if cells_per_axis < 2 {
            return Err(BgkError::InvalidGrid(format!(
                "cells_per_axis must be >= 2, got {cells_per_axis}"
            )));
        }
        Ok(Self {
            dims,
            cells_per_axis,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn len(&self) -> usize {
        self.cells_per_axis.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.cells_per_axis as f64
    }

    /// Measure of one cell (`dx^dims`); the cells partition a unit volume.
    pub fn cell_volume(&self) -> f64 {
        self.cell_width().powi(self.dims as i32)
    }

    /// Per-axis integer coordinates of a cell; unused axes are 0.
    pub fn coords(&self, cell: usize) -> [usize; 3] {
        let n = self.cells_per_axis;
        let mut out = [0; 3];
        let mut rest = cell;
        for c in out.iter_mut().take(self.dims) {
            *c = rest % n;
            rest /= n;
        }
        out
    }

    pub fn index(&self, coords: [usize; 3]) -> usize {
        let n = self.cells_per_axis;
        let mut idx = 0;
        for axis in (0..self.dims).rev() {
            idx = idx * n + coords[axis] % n;
        }
        idx
    }

    /// Cell reached by moving `offset` cells along `axis`, wrapping periodically.
    pub fn neighbor(&self, cell: usize, axis: usize, offset: isize) -> usize {
        let mut c = self.coords(cell);
        c[axis] = wrap(c[axis] as isize + offset, self.cells_per_axis);
        self.index(c)
    }

    /// Cell-center position in `[0, 1)^3`; unused axes sit at 0.5.
    pub fn center(&self, cell: usize) -> [f64; 3] {
        let c = self.coords(cell);
        let h = self.cell_width();
        let mut x = [0.5; 3];
        for axis in 0..self.dims {
            x[axis] = (c[axis] as f64 + 0.5) * h;
        }
        x
    }
}

/// Periodic index wrap into `0..n`.
pub fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// `e5(v) = (|v|^2 - 3) / sqrt(6)`.
pub fn e5(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - 3.0) / 6f64.sqrt()
}

/// The collision invariants `(1, v1, v2, v3, (|v|^2 - 3)/sqrt 6)` tabulated
/// at every velocity node.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionBasis {
    values: Vec<[f64; 5]>,
}

impl CollisionBasis {
    pub fn new(grid: &VelocityGrid) -> Self {
        let values = grid
            .nodes()
            .iter()
            .map(|&v| [1.0, v[0], v[1], v[2], e5(v)])
            .collect();
        Self { values }
    }

    pub fn values(&self) -> &[[f64; 5]] {
        &self.values
    }

    pub fn at(&self, node: usize) -> [f64; 5] {
        self.values[node]
    }
}
