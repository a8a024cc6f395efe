//! Moments, Maxwellians, collision frequency and the change of variables
//! between primitive `(rho, U, T)` and conserved `(rho, rho U, G)` fields.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix5, Vector5};
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{BgkError, Result};
use crate::grid::{CollisionBasis, SpatialGrid, VelocityGrid};

const SQRT_6: f64 = 2.449_489_742_783_178;
const SQRT_2_3: f64 = 0.816_496_580_927_726;

/// Relative moment residual the discrete Maxwellian must reach.
pub const NEWTON_TOLERANCE: f64 = 1e-12;
/// Newton stops early once the residual is this far into roundoff.
const NEWTON_SATISFIED: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 12;
/// Fraction of analytic Maxwellian mass allowed outside the velocity box.
pub const BOUNDARY_MASS_TOLERANCE: f64 = 1e-8;

/// Grids, collision basis and the discrete global Maxwellian shared by every
/// grid function of a simulation.
#[derive(Debug)]
pub struct PhaseSpace {
    spatial: SpatialGrid,
    velocity: VelocityGrid,
    basis: CollisionBasis,
    mu: Vec<f64>,
    mu_params: DiscreteMaxwellianParams,
}

impl PhaseSpace {
    /// Builds the phase space and fits the discrete global Maxwellian `mu`
    /// to the moments of `(1, 0, 1)`.
    pub fn new(spatial: SpatialGrid, velocity: VelocityGrid) -> Result<Arc<Self>> {
        let basis = CollisionBasis::new(&velocity);
        let mut mu = vec![0.0; velocity.len()];
        let fit = fit_cell_maxwellian(&MacroState::equilibrium(), &velocity, None, &mut mu)?;
        Ok(Arc::new(Self {
            spatial,
            velocity,
            basis,
            mu,
            mu_params: fit.params,
        }))
    }

    pub fn spatial(&self) -> &SpatialGrid {
        &self.spatial
    }

    pub fn velocity(&self) -> &VelocityGrid {
        &self.velocity
    }

    pub fn basis(&self) -> &CollisionBasis {
        &self.basis
    }

    /// Discrete global Maxwellian at every velocity node.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn mu_params(&self) -> DiscreteMaxwellianParams {
        self.mu_params
    }

    pub fn n_cells(&self) -> usize {
        self.spatial.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.velocity.len()
    }
}

/// A value per (spatial cell, velocity node), stored cell-major.
#[derive(Debug, Clone)]
pub struct GridFunction {
    space: Arc<PhaseSpace>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(space: &Arc<PhaseSpace>) -> Self {
        let len = space.n_cells() * space.n_nodes();
        Self {
            space: Arc::clone(space),
            values: vec![0.0; len],
        }
    }

    pub fn from_values(space: &Arc<PhaseSpace>, values: Vec<f64>) -> Result<Self> {
        let len = space.n_cells() * space.n_nodes();
        if values.len() != len {
            return Err(BgkError::InvalidParameter(format!(
                "grid function needs {len} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            space: Arc::clone(space),
            values,
        })
    }

    /// Fills every cell with the same velocity profile.
    pub fn uniform(space: &Arc<PhaseSpace>, profile: &[f64]) -> Self {
        assert_eq!(profile.len(), space.n_nodes());
        let mut values = Vec::with_capacity(space.n_cells() * space.n_nodes());
        for _ in 0..space.n_cells() {
            values.extend_from_slice(profile);
        }
        Self {
            space: Arc::clone(space),
            values,
        }
    }

    /// The discrete global Maxwellian in every cell.
    pub fn global_maxwellian(space: &Arc<PhaseSpace>) -> Self {
        Self::uniform(space, space.mu())
    }

    /// Evaluates `f(x, v)` at cell centers and velocity nodes.
    pub fn from_fn(space: &Arc<PhaseSpace>, f: impl Fn([f64; 3], [f64; 3]) -> f64) -> Self {
        let mut out = Self::zeros(space);
        let nodes = space.velocity().nodes();
        for cell in 0..space.n_cells() {
            let x = space.spatial().center(cell);
            for (slot, &v) in out.cell_mut(cell).iter_mut().zip(nodes) {
                *slot = f(x, v);
            }
        }
        out
    }

    pub fn space(&self) -> &Arc<PhaseSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        let n = self.space.n_nodes();
        &self.values[cell * n..(cell + 1) * n]
    }

    pub fn cell_mut(&mut self, cell: usize) -> &mut [f64] {
        let n = self.space.n_nodes();
        &mut self.values[cell * n..(cell + 1) * n]
    }

    /// `self - other` on the same phase space.
    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        GridFunction {
            space: Arc::clone(&self.space),
            values,
        }
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        GridFunction {
            space: Arc::clone(&self.space),
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Macroscopic state of one cell in both primitive and conserved form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroState {
    pub rho: f64,
    pub u: [f64; 3],
    pub t: f64,
    pub rho_u: [f64; 3],
    /// `G = (rho |U|^2 + 3 rho T - 3 rho) / sqrt 6`
    pub g: f64,
}

impl MacroState {
    pub fn equilibrium() -> Self {
        Self {
            rho: 1.0,
            u: [0.0; 3],
            t: 1.0,
            rho_u: [0.0; 3],
            g: 0.0,
        }
    }

    pub fn from_primitive(rho: f64, u: [f64; 3], t: f64) -> Self {
        let (rho_u, g) = conserved_from_primitive(rho, u, t);
        Self {
            rho,
            u,
            t,
            rho_u,
            g,
        }
    }

    pub fn from_conserved(rho: f64, rho_u: [f64; 3], g: f64) -> Result<Self> {
        let (rho, u, t) = primitive_from_conserved(rho, rho_u, g)?;
        Ok(Self {
            rho,
            u,
            t,
            rho_u,
            g,
        })
    }

    /// Second moment `rho |U|^2 + 3 rho T`.
    pub fn energy(&self) -> f64 {
        SQRT_6 * self.g + 3.0 * self.rho
    }

    pub fn conserved(&self) -> [f64; 5] {
        [self.rho, self.rho_u[0], self.rho_u[1], self.rho_u[2], self.g]
    }
}

/// Per-cell macroscopic fields.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroFields {
    pub cells: Vec<MacroState>,
}

impl MacroFields {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

pub fn conserved_from_primitive(rho: f64, u: [f64; 3], t: f64) -> ([f64; 3], f64) {
    let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let rho_u = [rho * u[0], rho * u[1], rho * u[2]];
    let g = (rho * u2 + 3.0 * rho * t - 3.0 * rho) / SQRT_6;
    (rho_u, g)
}

/// Inverse of [`conserved_from_primitive`]:
/// `U = rho U / rho`, `T = sqrt(2/3) G / rho - |rho U|^2 / (3 rho^2) + 1`.
pub fn primitive_from_conserved(rho: f64, rho_u: [f64; 3], g: f64) -> Result<(f64, [f64; 3], f64)> {
    if !(rho > 0.0) {
        return Err(BgkError::NonPositiveDensity { cell: 0, rho });
    }
    let m2 = rho_u[0] * rho_u[0] + rho_u[1] * rho_u[1] + rho_u[2] * rho_u[2];
    let u = [rho_u[0] / rho, rho_u[1] / rho, rho_u[2] / rho];
    let t = SQRT_2_3 * g / rho - m2 / (3.0 * rho * rho) + 1.0;
    if !(t > 0.0) {
        return Err(BgkError::NonPositiveTemperature {
            cell: 0,
            temperature: t,
        });
    }
    Ok((rho, u, t))
}

/// Raw moments `(rho, rho U, sum |v|^2 F)` of one cell.
fn raw_moments(cell: &[f64], grid: &VelocityGrid) -> [f64; 5] {
    let mut acc = [0.0; 5];
    for (&f, v) in cell.iter().zip(grid.nodes()) {
        acc[0] += f;
        acc[1] += f * v[0];
        acc[2] += f * v[1];
        acc[3] += f * v[2];
        acc[4] += f * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    }
    let w = grid.weight();
    acc.map(|a| a * w)
}

/// Macroscopic state of a single cell's velocity profile.
pub fn cell_moments(cell_values: &[f64], grid: &VelocityGrid, cell: usize) -> Result<MacroState> {
    let [rho, mx, my, mz, energy] = raw_moments(cell_values, grid);
    if !(rho > 0.0) {
        return Err(BgkError::NonPositiveDensity { cell, rho });
    }
    let m = [mx, my, mz];
    let u = [mx / rho, my / rho, mz / rho];
    let m2 = mx * mx + my * my + mz * mz;
    let t = (energy - m2 / rho) / (3.0 * rho);
    if !(t > 0.0) {
        return Err(BgkError::NonPositiveTemperature {
            cell,
            temperature: t,
        });
    }
    Ok(MacroState {
        rho,
        u,
        t,
        rho_u: m,
        g: (energy - 3.0 * rho) / SQRT_6,
    })
}

/// Density, bulk velocity and temperature of every cell.
pub fn compute_moments(f: &GridFunction) -> Result<MacroFields> {
    let grid = f.space().velocity();
    let n = f.space().n_nodes();
    let cells = f
        .values()
        .par_chunks(n)
        .enumerate()
        .map(|(cell, values)| cell_moments(values, grid, cell))
        .collect::<Result<Vec<_>>>()?;
    Ok(MacroFields { cells })
}

/// `nu = rho^a T^b` per cell.
pub fn collision_frequency(fields: &MacroFields, a: f64, b: f64) -> Result<Vec<f64>> {
    check_frequency_exponents(a, b)?;
    Ok(fields
        .cells
        .iter()
        .map(|c| cell_frequency(c.rho, c.t, a, b))
        .collect())
}

pub fn check_frequency_exponents(a: f64, b: f64) -> Result<()> {
    if !(b >= 0.0 && a >= b) || !a.is_finite() {
        return Err(BgkError::InvalidParameter(format!(
            "collision frequency exponents need a >= b >= 0, got a = {a}, b = {b}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn cell_frequency(rho: f64, t: f64, a: f64, b: f64) -> f64 {
    rho.powf(a) * t.powf(b)
}

/// Analytic local Maxwellian `rho (2 pi T)^{-3/2} exp(-|v - U|^2 / (2T))`.
pub fn eval_maxwellian(rho: f64, u: [f64; 3], t: f64, v: [f64; 3]) -> f64 {
    let d = [v[0] - u[0], v[1] - u[1], v[2] - u[2]];
    let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    rho * (2.0 * PI * t).powf(-1.5) * (-d2 / (2.0 * t)).exp()
}

/// Exponent coefficients of `exp(alpha + beta . v + gamma |v|^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteMaxwellianParams {
    pub alpha: f64,
    pub beta: [f64; 3],
    pub gamma: f64,
}

impl DiscreteMaxwellianParams {
    /// Coefficients of the continuous Maxwellian with the given state.
    pub fn analytic(state: &MacroState) -> Self {
        let MacroState { rho, u, t, .. } = *state;
        let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        Self {
            alpha: rho.ln() - 1.5 * (2.0 * PI * t).ln() - u2 / (2.0 * t),
            beta: [u[0] / t, u[1] / t, u[2] / t],
            gamma: -0.5 / t,
        }
    }

    #[inline]
    pub fn eval(&self, v: [f64; 3]) -> f64 {
        let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        (self.alpha + self.beta[0] * v[0] + self.beta[1] * v[1] + self.beta[2] * v[2]
            + self.gamma * v2)
            .exp()
    }

    fn offset(&self, step: &Vector5<f64>, scale: f64) -> Self {
        Self {
            alpha: self.alpha + scale * step[0],
            beta: [
                self.beta[0] + scale * step[1],
                self.beta[1] + scale * step[2],
                self.beta[2] + scale * step[3],
            ],
            gamma: self.gamma + scale * step[4],
        }
    }
}

/// Outcome of one discrete Maxwellian fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellianFit {
    pub params: DiscreteMaxwellianParams,
    /// Max moment mismatch divided by `max(rho, 1)`.
    pub residual: f64,
    pub iterations: usize,
    /// Analytic Maxwellian mass fraction lying outside the velocity box.
    pub boundary_mass: f64,
}

impl MaxwellianFit {
    /// True when the velocity truncation is no longer faithful for this state.
    pub fn boundary_flag(&self) -> bool {
        self.boundary_mass > BOUNDARY_MASS_TOLERANCE
    }
}

/// Fraction of the continuous Maxwellian's mass outside `[-v_max, v_max]^3`.
pub fn boundary_mass_fraction(state: &MacroState, v_max: f64) -> f64 {
    let s = (2.0 * state.t).sqrt();
    // product of per-axis inside fractions, accumulated as 1 - outside
    let mut inside = 1.0;
    for &u in &state.u {
        let out = 0.5 * (erfc((v_max - u) / s) + erfc((v_max + u) / s));
        inside *= 1.0 - out;
    }
    1.0 - inside
}

/// Evaluates the exponential family at every node and returns its raw
/// moments `(1, v, |v|^2)` together with the 15 distinct entries of the
/// moment Jacobian.
fn family_moments(
    params: &DiscreteMaxwellianParams,
    grid: &VelocityGrid,
    out: &mut [f64],
) -> ([f64; 5], Matrix5<f64>) {
    let mut m = [0.0; 5];
    // x, y, z, s = |v|^2 products
    let (mut xx, mut yy, mut zz, mut xy, mut xz, mut yz) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut xs, mut ys, mut zs, mut ss) = (0.0, 0.0, 0.0, 0.0);
    for (slot, &v) in out.iter_mut().zip(grid.nodes()) {
        let f = params.eval(v);
        *slot = f;
        let s = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let fx = f * v[0];
        let fy = f * v[1];
        let fz = f * v[2];
        let fs = f * s;
        m[0] += f;
        m[1] += fx;
        m[2] += fy;
        m[3] += fz;
        m[4] += fs;
        xx += fx * v[0];
        yy += fy * v[1];
        zz += fz * v[2];
        xy += fx * v[1];
        xz += fx * v[2];
        yz += fy * v[2];
        xs += fx * s;
        ys += fy * s;
        zs += fz * s;
        ss += fs * s;
    }
    let w = grid.weight();
    let m = m.map(|x| x * w);
    #[rustfmt::skip]
    let jac = Matrix5::new(
        m[0], m[1], m[2], m[3], m[4],
        m[1], xx * w, xy * w, xz * w, xs * w,
        m[2], xy * w, yy * w, yz * w, ys * w,
        m[3], xz * w, yz * w, zz * w, zs * w,
        m[4], xs * w, ys * w, zs * w, ss * w,
    );
    (m, jac)
}

fn moment_residual(m: &[f64; 5], target: &[f64; 5], scale: f64) -> f64 {
    m.iter()
        .zip(target)
        .fold(0.0, |acc: f64, (a, b)| acc.max((a - b).abs()))
        / scale
}

/// Fits `exp(alpha + beta . v + gamma |v|^2)` on `grid` so that its discrete
/// moments match those of `target`, writing the nodal values into `out`.
///
/// Newton starts from `init` or from the analytic coefficients; steps are
/// halved while the residual does not decrease.
pub fn fit_cell_maxwellian(
    target: &MacroState,
    grid: &VelocityGrid,
    init: Option<&DiscreteMaxwellianParams>,
    out: &mut [f64],
) -> Result<MaxwellianFit> {
    if !(target.rho > 0.0) {
        return Err(BgkError::NonPositiveDensity {
            cell: 0,
            rho: target.rho,
        });
    }
    if !(target.t > 0.0) {
        return Err(BgkError::NonPositiveTemperature {
            cell: 0,
            temperature: target.t,
        });
    }
    let goal = [
        target.rho,
        target.rho_u[0],
        target.rho_u[1],
        target.rho_u[2],
        target.energy(),
    ];
    let scale = target.rho.max(1.0);

    let mut params = init
        .copied()
        .unwrap_or_else(|| DiscreteMaxwellianParams::analytic(target));
    let mut scratch = vec![0.0; out.len()];
    let (mut m, mut jac) = family_moments(&params, grid, out);
    let mut residual = moment_residual(&m, &goal, scale);
    let mut iterations = 0;

    while iterations < NEWTON_MAX_ITER && residual > NEWTON_SATISFIED {
        iterations += 1;
        let rhs = Vector5::from_iterator(m.iter().zip(&goal).map(|(a, b)| b - a));
        let step = match jac.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => match jac.lu().solve(&rhs) {
                Some(s) => s,
                None => break,
            },
        };

        let mut accepted = false;
        let mut scale_step = 1.0;
        for _ in 0..NEWTON_MAX_HALVINGS {
            let trial = params.offset(&step, scale_step);
            if trial.gamma < 0.0 {
                let (tm, tj) = family_moments(&trial, grid, &mut scratch);
                let tr = moment_residual(&tm, &goal, scale);
                if tr < residual {
                    params = trial;
                    m = tm;
                    jac = tj;
                    residual = tr;
                    out.copy_from_slice(&scratch);
                    accepted = true;
                    break;
                }
            }
            scale_step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if !(residual <= NEWTON_TOLERANCE) {
        return Err(BgkError::NewtonNonConvergence {
            iterations,
            residual,
        });
    }
    if params.gamma >= 0.0 {
        return Err(BgkError::NonNegativeGamma {
            gamma: params.gamma,
        });
    }
    Ok(MaxwellianFit {
        params,
        residual,
        iterations,
        boundary_mass: boundary_mass_fraction(target, grid.v_max()),
    })
}

/// Moment-matched discrete Maxwellian of every cell.
pub fn discrete_maxwellian(
    fields: &MacroFields,
    space: &Arc<PhaseSpace>,
) -> Result<(GridFunction, Vec<MaxwellianFit>)> {
    let mut out = GridFunction::zeros(space);
    let fits = fit_all(fields, space, None, &mut out)?;
    Ok((out, fits))
}

/// Fits every cell into `out`, warm-starting from `init` when provided.
pub(crate) fn fit_all(
    fields: &MacroFields,
    space: &Arc<PhaseSpace>,
    init: Option<&[DiscreteMaxwellianParams]>,
    out: &mut GridFunction,
) -> Result<Vec<MaxwellianFit>> {
    let n = space.n_nodes();
    let grid = space.velocity();
    out.values_mut()
        .par_chunks_mut(n)
        .enumerate()
        .map(|(cell, slot)| {
            let start = init.map(|p| &p[cell]);
            fit_cell_maxwellian(&fields.cells[cell], grid, start, slot).map_err(|e| e.at_cell(cell))
        })
        .collect()
}
