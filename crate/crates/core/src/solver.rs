//! Strang splitting of the BGK equation on the periodic torus.
//!
//! Transport is a semi-Lagrangian shift with periodic cubic Lagrange
//! interpolation, one spatial axis at a time. Relaxation with frozen moments
//! is solved exactly:
//!
//! ```text
//! F <- exp(-nu dt) F + (1 - exp(-nu dt)) M(F)
//! ```

use std::sync::Arc;

use nalgebra::{Matrix5, Vector5};
use rayon::prelude::*;

use crate::config::{Scenario, SimConfig};
use crate::diagnostics::{
    fit_decay_rate, weighted_linf_norm, DecayFit, DiagnosticsRecord, RegimeReport,
};
use crate::error::{BgkError, Result};
use crate::fields::{
    cell_frequency, cell_moments, check_frequency_exponents, compute_moments, fit_cell_maxwellian,
    DiscreteMaxwellianParams, GridFunction, MacroFields, PhaseSpace,
};
use crate::grid::{wrap, SpatialGrid, VelocityGrid};
use crate::snapshot::Snapshot;

/// Interpolation undershoots below `-CLAMP_THRESHOLD` are reset to zero.
pub const CLAMP_THRESHOLD: f64 = 1e-14;
/// A step aborts when it clamps more than this fraction of the total mass.
pub const MAX_CLAMPED_FRACTION: f64 = 1e-8;

/// Four-point stencil `j-1, j, j+1, j+2` around the departure point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Stencil {
    offset: isize,
    /// Weights of `j-1`, `j+1`, `j+2`; the weight of `j` is implied.
    w: [f64; 3],
}

impl Stencil {
    /// Stencil sampling `f(i - shift)` for a displacement of `shift` cells.
    fn new(shift: f64) -> Self {
        let x = -shift;
        let j = x.floor();
        let t = x - j;
        let w = if t == 0.0 {
            [0.0; 3]
        } else {
            [
                -t * (t - 1.0) * (t - 2.0) / 6.0,
                -(t + 1.0) * t * (t - 2.0) / 2.0,
                (t + 1.0) * t * (t - 1.0) / 6.0,
            ]
        };
        Self {
            offset: j as isize,
            w,
        }
    }
}

/// Precomputed stencils for advecting every velocity node by `v dt`.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    dt: f64,
    axes: Vec<Vec<Stencil>>,
}

impl TransportPlan {
    pub fn new(space: &PhaseSpace, dt: f64) -> Self {
        let h = space.spatial().cell_width();
        let axes = (0..space.spatial().dims())
            .map(|axis| {
                space
                    .velocity()
                    .nodes()
                    .iter()
                    .map(|v| Stencil::new(v[axis] * dt / h))
                    .collect()
            })
            .collect();
        Self { dt, axes }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        let space = f.space();
        let mut src = f.values().to_vec();
        let mut dst = vec![0.0; src.len()];
        for (axis, stencils) in self.axes.iter().enumerate() {
            advect_axis(&src, &mut dst, space.spatial(), axis, stencils, space.n_nodes());
            std::mem::swap(&mut src, &mut dst);
        }
        GridFunction::from_values(space, src).expect("same layout")
    }
}

fn advect_axis(
    src: &[f64],
    dst: &mut [f64],
    grid: &SpatialGrid,
    axis: usize,
    stencils: &[Stencil],
    n_nodes: usize,
) {
    let n = grid.cells_per_axis();
    let stride = n.pow(axis as u32);
    dst.par_chunks_mut(n_nodes)
        .enumerate()
        .for_each(|(cell, out)| {
            let c = grid.coords(cell)[axis] as isize;
            let base = cell - c as usize * stride;
            let at = |k: isize| (base + stride * wrap(c + k, n)) * n_nodes;
            for (node, slot) in out.iter_mut().enumerate() {
                let s = &stencils[node];
                let f0 = src[at(s.offset) + node];
                if s.w == [0.0; 3] {
                    *slot = f0;
                    continue;
                }
                let fm = src[at(s.offset - 1) + node];
                let f1 = src[at(s.offset + 1) + node];
                let f2 = src[at(s.offset + 2) + node];
                *slot = f0 + s.w[0] * (fm - f0) + s.w[1] * (f1 - f0) + s.w[2] * (f2 - f0);
            }
        });
}

/// Free transport over `dt`.
pub fn step_transport(f: &GridFunction, dt: f64) -> GridFunction {
    TransportPlan::new(f.space(), dt).apply(f)
}

fn relax_cell(
    values: &mut [f64],
    scratch: &mut [f64],
    grid: &VelocityGrid,
    cell: usize,
    warm: &mut DiscreteMaxwellianParams,
    dt: f64,
    a: f64,
    b: f64,
) -> Result<()> {
    let state = cell_moments(values, grid, cell)?;
    let fit = match fit_cell_maxwellian(&state, grid, Some(warm), scratch) {
        Ok(fit) => fit,
        Err(BgkError::NewtonNonConvergence { .. }) => {
            fit_cell_maxwellian(&state, grid, None, scratch).map_err(|e| e.at_cell(cell))?
        }
        Err(e) => return Err(e.at_cell(cell)),
    };
    *warm = fit.params;
    let x = cell_frequency(state.rho, state.t, a, b) * dt;
    let keep = (-x).exp();
    let gain = -(-x).exp_m1();
    for (f, &m) in values.iter_mut().zip(scratch.iter()) {
        *f = keep * *f + gain * m;
    }
    Ok(())
}

fn relax_in_place(
    f: &mut GridFunction,
    dt: f64,
    a: f64,
    b: f64,
    warm: &mut [DiscreteMaxwellianParams],
) -> Result<()> {
    let space = Arc::clone(f.space());
    let n = space.n_nodes();
    let grid = space.velocity();
    f.values_mut()
        .par_chunks_mut(n)
        .zip(warm.par_iter_mut())
        .enumerate()
        .try_for_each_init(
            || vec![0.0; n],
            |scratch, (cell, (values, params))| {
                relax_cell(values, scratch, grid, cell, params, dt, a, b)
            },
        )
}

/// Exact relaxation over `dt` with the moments of `f` frozen.
pub fn step_relax(f: &GridFunction, dt: f64, a: f64, b: f64) -> Result<GridFunction> {
    check_frequency_exponents(a, b)?;
    let mut out = f.clone();
    let mut warm = vec![f.space().mu_params(); f.space().n_cells()];
    relax_in_place(&mut out, dt, a, b, &mut warm)?;
    Ok(out)
}

/// Distribution at a point in time together with its cached moments.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub f: GridFunction,
    pub time: f64,
    pub step_count: u64,
    pub fields: MacroFields,
    warm: Vec<DiscreteMaxwellianParams>,
}

impl SolverState {
    pub fn new(f: GridFunction, time: f64, step_count: u64) -> Result<Self> {
        let fields = compute_moments(&f)?;
        let warm = vec![f.space().mu_params(); f.space().n_cells()];
        Ok(Self {
            f,
            time,
            step_count,
            fields,
            warm,
        })
    }

    /// Per-cell Newton starting points for the next relaxation step.
    pub fn warm_start(&self) -> &[DiscreteMaxwellianParams] {
        &self.warm
    }

    /// Restores starting points saved with [`Self::warm_start`], so that a
    /// resumed run repeats the uninterrupted one bit for bit.
    pub fn set_warm_start(&mut self, warm: Vec<DiscreteMaxwellianParams>) -> Result<()> {
        if warm.len() != self.warm.len() {
            return Err(BgkError::InvalidParameter(format!(
                "warm start has {} cells, grid has {}",
                warm.len(),
                self.warm.len()
            )));
        }
        self.warm = warm;
        Ok(())
    }
}

/// What a single step had to clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub step: u64,
    pub clamped_mass: f64,
    pub clamped_values: usize,
}

/// Strang stepper with cached transport stencils.
#[derive(Debug, Clone)]
pub struct Solver {
    half: TransportPlan,
    dt: f64,
    a: f64,
    b: f64,
}

impl Solver {
    pub fn new(space: &PhaseSpace, dt: f64, a: f64, b: f64) -> Result<Self> {
        check_frequency_exponents(a, b)?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(BgkError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            half: TransportPlan::new(space, 0.5 * dt),
            dt,
            a,
            b,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `transport(dt/2) . relax(dt) . transport(dt/2)`, then clamp and
    /// refresh the cached moments.
    pub fn step(&self, state: &mut SolverState) -> Result<StepInfo> {
        let step = state.step_count + 1;
        let mut f = self.half.apply(&state.f);
        relax_in_place(&mut f, self.dt, self.a, self.b, &mut state.warm)?;
        let mut f = self.half.apply(&f);

        let n = f.space().n_nodes();
        let parts: Vec<(f64, usize, f64, bool)> = f
            .values_mut()
            .par_chunks_mut(n)
            .map(|cell| {
                let mut clamped = 0.0;
                let mut count = 0;
                let mut mass = 0.0;
                let mut finite = true;
                for x in cell.iter_mut() {
                    if !x.is_finite() {
                        finite = false;
                    } else if *x < -CLAMP_THRESHOLD {
                        clamped -= *x;
                        count += 1;
                        *x = 0.0;
                    }
                    mass += *x;
                }
                (clamped, count, mass, finite)
            })
            .collect();
        if parts.iter().any(|p| !p.3) {
            return Err(BgkError::NonFinite { step });
        }
        let clamped: f64 = parts.iter().map(|p| p.0).sum();
        let count: usize = parts.iter().map(|p| p.1).sum();
        let mass: f64 = parts.iter().map(|p| p.2).sum();
        if clamped > MAX_CLAMPED_FRACTION * mass {
            return Err(BgkError::ExcessiveClamping {
                step,
                clamped,
                total: mass,
            });
        }
        let w = f.space().spatial().cell_volume() * f.space().velocity().weight();
        if count > 0 {
            log::warn!(
                "step {step}: clamped {count} negative values carrying mass {:.3e}",
                clamped * w
            );
        }

        state.fields = compute_moments(&f).map_err(|e| match e {
            e @ (BgkError::NonPositiveDensity { .. } | BgkError::NonPositiveTemperature { .. }) => e,
            _ => BgkError::NonFinite { step },
        })?;
        state.f = f;
        state.step_count = step;
        state.time = step as f64 * self.dt;
        Ok(StepInfo {
            step,
            clamped_mass: clamped * w,
            clamped_values: count,
        })
    }
}

/// One Strang step outside of a [`Solver`].
pub fn strang_step(state: &mut SolverState, dt: f64, a: f64, b: f64) -> Result<StepInfo> {
    Solver::new(state.f.space(), dt, a, b)?.step(state)
}

/// Removes the mass, momentum and energy of `F - mu` with a correction in
/// `span{e_i mu}`, halving the correction until `F` stays non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    /// Fraction of the full correction that was applied.
    pub scale: f64,
    /// Pairings `<F - mu, e_i>` over the torus after the correction.
    pub residual: [f64; 5],
}

/// Pairings `sum_x <F - mu, e_i>_v` over the whole torus.
pub fn global_pairings(big_f: &GridFunction) -> [f64; 5] {
    let space = big_f.space();
    let mu = space.mu();
    let basis = space.basis().values();
    let parts: Vec<[f64; 5]> = big_f
        .values()
        .par_chunks(space.n_nodes())
        .map(|cell| {
            let mut c = [0.0; 5];
            for ((&x, &m), e) in cell.iter().zip(mu).zip(basis) {
                let d = x - m;
                for i in 0..5 {
                    c[i] += d * e[i];
                }
            }
            c
        })
        .collect();
    let w = space.spatial().cell_volume() * space.velocity().weight();
    let mut total = [0.0; 5];
    for p in &parts {
        for i in 0..5 {
            total[i] += p[i];
        }
    }
    total.map(|t| t * w)
}

pub fn normalize_invariants(big_f: &mut GridFunction) -> Result<Normalization> {
    let space = Arc::clone(big_f.space());
    let mu = space.mu();
    let basis = space.basis().values();
    let w = space.velocity().weight();

    let mut gram = Matrix5::<f64>::zeros();
    for (e, &m) in basis.iter().zip(mu) {
        for i in 0..5 {
            for j in 0..5 {
                gram[(i, j)] += e[i] * e[j] * m * w;
            }
        }
    }
    let c = Vector5::from(global_pairings(big_f));
    let coef = gram
        .cholesky()
        .ok_or_else(|| BgkError::InvalidGrid("collision basis Gram matrix is singular".into()))?
        .solve(&c);
    let correction: Vec<f64> = basis
        .iter()
        .zip(mu)
        .map(|(e, &m)| (0..5).map(|i| coef[i] * e[i]).sum::<f64>() * m)
        .collect();

    let original = big_f.values().to_vec();
    let n = space.n_nodes();
    let mut scale = 1.0;
    for _ in 0..60 {
        let ok = original
            .chunks(n)
            .all(|cell| cell.iter().zip(&correction).all(|(&x, &d)| x - scale * d >= 0.0));
        if ok {
            break;
        }
        scale *= 0.5;
    }
    if original.iter().any(|&x| x < 0.0) {
        scale = 0.0;
    }
    for (cell_out, cell_in) in big_f.values_mut().chunks_mut(n).zip(original.chunks(n)) {
        for ((o, &x), &d) in cell_out.iter_mut().zip(cell_in).zip(&correction) {
            *o = x - scale * d;
        }
    }
    Ok(Normalization {
        scale,
        residual: global_pairings(big_f),
    })
}

/// Velocity profile `(1 + v1 + e5(v) / 2)` of the near-equilibrium scenario.
fn near_equilibrium_profile(v: [f64; 3]) -> f64 {
    1.0 + v[0] + 0.5 * crate::grid::e5(v)
}

/// `mu (1 + eps sin(2 pi x1) (1 + v1 + e5 / 2))`, normalized and scaled so
/// that `||F0 - mu||_{inf,q} = amplitude`.
pub fn near_equilibrium(space: &Arc<PhaseSpace>, amplitude: f64, q: f64) -> Result<GridFunction> {
    let mu = space.mu();
    let mut f = GridFunction::zeros(space);
    let nodes = space.velocity().nodes();
    for cell in 0..space.n_cells() {
        let s = (2.0 * std::f64::consts::PI * space.spatial().center(cell)[0]).sin();
        for ((slot, &v), &m) in f.cell_mut(cell).iter_mut().zip(nodes).zip(mu) {
            *slot = m * s * near_equilibrium_profile(v);
        }
    }
    let mu_f = GridFunction::global_maxwellian(space);
    let norm = weighted_linf_norm(&f, q);
    if !(norm > 0.0) {
        return Err(BgkError::InvalidGrid(
            "near-equilibrium profile vanishes on this grid".into(),
        ));
    }
    // normalize a small copy so positivity never limits the correction
    let mut trial = mu_f.add(&scaled(&f, 1e-3 / norm));
    normalize_invariants(&mut trial)?;
    let shape = trial.sub(&mu_f);
    let big_f = mu_f.add(&scaled(&shape, amplitude / weighted_linf_norm(&shape, q)));
    check_nonnegative(&big_f)?;
    Ok(big_f)
}

/// `mu (1 + A sin(2 pi x1) exp(-|v|^2 / 4))`, normalized.
pub fn large_amplitude(space: &Arc<PhaseSpace>, amplitude: f64) -> Result<GridFunction> {
    let mu = space.mu();
    let mut big_f = GridFunction::zeros(space);
    let nodes = space.velocity().nodes();
    for cell in 0..space.n_cells() {
        let s = (2.0 * std::f64::consts::PI * space.spatial().center(cell)[0]).sin();
        for ((slot, &v), &m) in big_f.cell_mut(cell).iter_mut().zip(nodes).zip(mu) {
            let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            *slot = m * (1.0 + amplitude * s * (-0.25 * v2).exp());
        }
    }
    normalize_invariants(&mut big_f)?;
    check_nonnegative(&big_f)?;
    Ok(big_f)
}

fn scaled(f: &GridFunction, s: f64) -> GridFunction {
    let mut out = f.clone();
    out.values_mut().iter_mut().for_each(|x| *x *= s);
    out
}

fn check_nonnegative(f: &GridFunction) -> Result<()> {
    let n = f.space().n_nodes();
    match f.values().iter().position(|&x| !(x >= 0.0)) {
        None => Ok(()),
        Some(i) => Err(BgkError::NegativeDistribution {
            cell: i / n,
            node: i % n,
            value: f.values()[i],
        }),
    }
}

/// `min over x of int F0(x - v t, v) dv` at each requested time, i.e. the
/// smallest density of the free-transported initial data.
pub fn free_transport_density_floor(f0: &GridFunction, times: &[f64]) -> Vec<(f64, f64)> {
    let space = f0.space();
    let w = space.velocity().weight();
    times
        .iter()
        .map(|&t| {
            let moved = if t == 0.0 { f0.clone() } else { step_transport(f0, t) };
            let floor = moved
                .values()
                .chunks(space.n_nodes())
                .map(|cell| cell.iter().sum::<f64>() * w)
                .fold(f64::INFINITY, f64::min);
            (t, floor)
        })
        .collect()
}

/// Phase space described by the grid section of a configuration.
pub fn phase_space(cfg: &SimConfig) -> Result<Arc<PhaseSpace>> {
    PhaseSpace::new(
        SpatialGrid::new(cfg.grid.dims, cfg.grid.cells_per_axis)?,
        VelocityGrid::new(cfg.grid.nodes_per_axis, cfg.grid.v_max)?,
    )
}

/// Initial state for the configured scenario. Custom snapshots supply
/// initial data only; the run clock starts at zero.
pub fn initial_state(cfg: &SimConfig, space: &Arc<PhaseSpace>) -> Result<SolverState> {
    match &cfg.scenario {
        Scenario::Equilibrium => SolverState::new(GridFunction::global_maxwellian(space), 0.0, 0),
        Scenario::NearEquilibrium { amplitude } => {
            SolverState::new(near_equilibrium(space, *amplitude, cfg.physics.q)?, 0.0, 0)
        }
        Scenario::LargeAmplitude { amplitude } => {
            SolverState::new(large_amplitude(space, *amplitude)?, 0.0, 0)
        }
        Scenario::Custom { snapshot } => {
            let snap = Snapshot::read(snapshot)?;
            let f = snap.to_grid_function(space)?;
            check_nonnegative(&f)?;
            SolverState::new(f, 0.0, 0)
        }
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: SolverState,
    pub records: Vec<DiagnosticsRecord>,
    pub regime: RegimeReport,
    /// Fit over `t >= max(t_eq_predicted, 0)`, or the reason it failed.
    pub decay: std::result::Result<DecayFit, String>,
    pub clamped_mass: f64,
}

/// Regime report and decay fit of a recorded series.
pub fn summarize(
    records: &[DiagnosticsRecord],
    delta: f64,
    q: f64,
) -> Result<(RegimeReport, std::result::Result<DecayFit, String>)> {
    let regime = RegimeReport::from_records(records, delta, q)?;
    let series: Vec<(f64, f64)> = records.iter().map(|r| (r.time, r.linf_q_norm)).collect();
    let t_start = regime.t_eq_predicted.max(0.0);
    let decay = fit_decay_rate(&series, t_start).map_err(|e| e.to_string());
    Ok((regime, decay))
}

/// Called after each step with the new state and, on recorded steps, the
/// diagnostics record.
pub trait Observer {
    fn observe(&mut self, state: &SolverState, record: Option<&DiagnosticsRecord>) -> Result<()>;
}

impl<F> Observer for F
where
    F: FnMut(&SolverState, Option<&DiagnosticsRecord>) -> Result<()>,
{
    fn observe(&mut self, state: &SolverState, record: Option<&DiagnosticsRecord>) -> Result<()> {
        self(state, record)
    }
}

/// Advances from `state` to the configured final time. `records` holds
/// earlier diagnostics when resuming and is extended in place.
pub fn run_from(
    cfg: &SimConfig,
    mut state: SolverState,
    mut records: Vec<DiagnosticsRecord>,
    observer: &mut dyn Observer,
) -> Result<RunOutput> {
    let solver = Solver::new(state.f.space(), cfg.time.dt, cfg.physics.a, cfg.physics.b)?;
    let q = cfg.physics.q;
    let n_steps = cfg.n_steps();
    let every = cfg.output.record_every;

    if records.is_empty() {
        let rec = DiagnosticsRecord::with_fields(&state.f, &state.fields, state.time, q)?;
        observer.observe(&state, Some(&rec))?;
        records.push(rec);
    }
    let mut clamped_mass = 0.0;
    while state.step_count < n_steps {
        let info = solver.step(&mut state)?;
        clamped_mass += info.clamped_mass;
        let record = if state.step_count % every == 0 || state.step_count == n_steps {
            let rec = DiagnosticsRecord::with_fields(&state.f, &state.fields, state.time, q)?;
            if !rec.is_finite() {
                return Err(BgkError::NonFinite {
                    step: state.step_count,
                });
            }
            records.push(rec);
            Some(rec)
        } else {
            None
        };
        observer.observe(&state, record.as_ref())?;
    }

    let (regime, decay) = summarize(&records, cfg.physics.delta, q)?;
    Ok(RunOutput {
        state,
        records,
        regime,
        decay,
        clamped_mass,
    })
}

/// Runs the configured scenario from `f0` at time zero.
pub fn run(cfg: &SimConfig, f0: GridFunction) -> Result<RunOutput> {
    let state = SolverState::new(f0, 0.0, 0)?;
    let mut quiet = |_: &SolverState, _: Option<&DiagnosticsRecord>| Ok(());
    run_from(cfg, state, Vec::new(), &mut quiet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::discrete_maxwellian;

    fn space(dims: usize, cells: usize, nodes: usize, v_max: f64) -> Arc<PhaseSpace> {
        PhaseSpace::new(
            SpatialGrid::new(dims, cells).unwrap(),
            VelocityGrid::new(nodes, v_max).unwrap(),
        )
        .unwrap()
    }

    fn max_diff(a: &GridFunction, b: &GridFunction) -> f64 {
        a.sub(b).max_abs()
    }

    #[test]
    fn stencil_weights_sum_to_one_and_vanish_on_integers() {
        for &s in &[0.3, -0.3, 1.75, -2.25, 7.1] {
            let st = Stencil::new(s);
            let t = -s - (-s).floor();
            let w0 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
            assert!((st.w.iter().sum::<f64>() + w0 - 1.0).abs() < 1e-15);
        }
        assert_eq!(Stencil::new(3.0), Stencil { offset: -3, w: [0.0; 3] });
        assert_eq!(Stencil::new(-2.0), Stencil { offset: 2, w: [0.0; 3] });
    }

    #[test]
    fn uniform_data_is_invariant_bitwise() {
        for dims in 1..=3 {
            let s = space(dims, 6, 4, 2.0);
            let profile: Vec<f64> = (0..s.n_nodes()).map(|i| 0.1 + (i as f64).sin().abs()).collect();
            let f = GridFunction::uniform(&s, &profile);
            let g = step_transport(&f, 0.0371);
            assert!(f.values().iter().zip(g.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn lattice_aligned_shift_is_a_rotation() {
        // nodes are +-0.5, +-1.5; with 8 cells and dt = 0.25 the shifts are
        // 1 and 3 cells
        let s = space(1, 8, 4, 2.0);
        let f = GridFunction::from_fn(&s, |x, v| (x[0] * 10.0).exp() + v[0] + 3.0 * v[1] + 5.0);
        let g = step_transport(&f, 0.25);
        let h = s.spatial().cell_width();
        for cell in 0..8 {
            for (node, v) in s.velocity().nodes().iter().enumerate() {
                let shift = (v[0] * 0.25 / h).round() as isize;
                let from = wrap(cell as isize - shift, 8);
                assert_eq!(g.cell(cell)[node], f.cell(from)[node]);
            }
        }
    }

    #[test]
    fn transport_conserves_mass() {
        let s = space(2, 8, 4, 2.0);
        let f = GridFunction::from_fn(&s, |x, v| 1.0 + 0.5 * (6.0 * x[0] + x[1] + v[0]).sin());
        let g = step_transport(&f, 0.123);
        let sum = |f: &GridFunction| f.values().iter().sum::<f64>();
        assert!((sum(&f) - sum(&g)).abs() < 1e-12 * sum(&f));
    }

    fn sine_period_error(cells: usize) -> f64 {
        let s = space(1, cells, 4, 2.0);
        let f0 = GridFunction::from_fn(&s, |x, _| 2.0 + (2.0 * std::f64::consts::PI * x[0]).sin());
        let plan = TransportPlan::new(&s, 0.1);
        let mut f = f0.clone();
        for _ in 0..20 {
            f = plan.apply(&f);
        }
        max_diff(&f, &f0)
    }

    #[test]
    fn transport_converges_at_third_order_or_better() {
        let e1 = sine_period_error(32);
        let e2 = sine_period_error(64);
        let order = (e1 / e2).log2();
        assert!(order >= 3.0, "order {order} ({e1:e} -> {e2:e})");
    }

    fn bumpy(s: &Arc<PhaseSpace>) -> GridFunction {
        GridFunction::from_fn(s, |x, v| {
            let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let bump = ((v[0] - 0.7).powi(2) + v[1] * v[1] + v[2] * v[2]) / 0.8;
            (1.0 + 0.3 * (2.0 * std::f64::consts::PI * x[0]).cos()) * (-0.5 * v2).exp()
                + 0.4 * (-bump).exp()
        })
    }

    #[test]
    fn relaxation_preserves_moments() {
        let s = space(1, 4, 12, 6.0);
        let f = bumpy(&s);
        let g = step_relax(&f, 0.7, 1.0, 0.5).unwrap();
        let m0 = compute_moments(&f).unwrap();
        let m1 = compute_moments(&g).unwrap();
        for (a, b) in m0.cells.iter().zip(&m1.cells) {
            for (x, y) in a.conserved().iter().zip(b.conserved()) {
                assert!((x - y).abs() <= 1e-12 * a.rho.max(1.0));
            }
        }
    }

    #[test]
    fn relaxation_fixed_point_and_long_time_limit() {
        let s = space(1, 4, 12, 6.0);
        let f = bumpy(&s);
        let fields = compute_moments(&f).unwrap();
        let (m, _) = discrete_maxwellian(&fields, &s).unwrap();

        let same = step_relax(&m, 0.3, 1.0, 1.0).unwrap();
        assert!(max_diff(&same, &m) <= 1e-12 * m.max_abs());

        // nu dt >= 50 in every cell
        let rho_min = fields.cells.iter().map(|c| c.rho).fold(f64::INFINITY, f64::min);
        let g = step_relax(&f, 50.0 / rho_min, 1.0, 0.0).unwrap();
        assert!(max_diff(&g, &m) <= 1e-14 * m.max_abs());
    }

    #[test]
    fn uniform_data_relaxes_exponentially() {
        let s = space(1, 4, 12, 6.0);
        let profile: Vec<f64> = s
            .velocity()
            .nodes()
            .iter()
            .map(|v| {
                let d = (v[0] - 0.5).powi(2) + v[1] * v[1] + v[2] * v[2];
                0.6 * (-0.5 * d / 0.8).exp() + 0.3 * (-0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / 1.5).exp()
            })
            .collect();
        let f0 = GridFunction::uniform(&s, &profile);
        let fields = compute_moments(&f0).unwrap();
        let nu = fields.cells[0].rho;
        let (m, _) = discrete_maxwellian(&fields, &s).unwrap();
        let dt = 10.0 / nu / 40.0;
        let mut state = SolverState::new(f0.clone(), 0.0, 0).unwrap();
        let solver = Solver::new(&s, dt, 1.0, 0.0).unwrap();
        for _ in 0..40 {
            solver.step(&mut state).unwrap();
        }
        let bound = (-10.0_f64).exp() * max_diff(&f0, &m) + 1e-12;
        assert!(max_diff(&state.f, &m) <= bound);
    }

    #[test]
    fn global_maxwellian_is_stationary() {
        let s = space(2, 6, 8, 5.0);
        let mu = GridFunction::global_maxwellian(&s);
        let mut state = SolverState::new(mu.clone(), 0.0, 0).unwrap();
        let solver = Solver::new(&s, 0.13, 1.0, 1.0).unwrap();
        for _ in 0..5 {
            solver.step(&mut state).unwrap();
            assert!(max_diff(&state.f, &mu) <= 1e-12);
        }
        assert_eq!(state.step_count, 5);
        assert!((state.time - 0.65).abs() < 1e-15);
    }

    fn strang_solution(s: &Arc<PhaseSpace>, f0: &GridFunction, dt: f64, t: f64) -> GridFunction {
        let mut state = SolverState::new(f0.clone(), 0.0, 0).unwrap();
        let solver = Solver::new(s, dt, 1.0, 0.0).unwrap();
        let n = (t / dt).round() as usize;
        for _ in 0..n {
            solver.step(&mut state).unwrap();
        }
        state.f
    }

    #[test]
    fn strang_splitting_is_second_order() {
        // every shift below is a whole number of cells, so the error is the
        // splitting error alone
        let s = space(1, 512, 4, 2.0);
        let f0 = GridFunction::from_fn(&s, |x, v| {
            let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            (-0.5 * v2).exp() * (1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).sin() * (1.0 + 0.3 * v[0]))
        });
        let t = 0.5;
        let reference = strang_solution(&s, &f0, 1.0 / 128.0, t);
        let e1 = max_diff(&strang_solution(&s, &f0, 1.0 / 16.0, t), &reference);
        let e2 = max_diff(&strang_solution(&s, &f0, 1.0 / 32.0, t), &reference);
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() <= 0.2, "order {order}");
    }

    #[test]
    fn normalization_removes_invariants() {
        let s = space(1, 8, 12, 6.0);
        let mut f = GridFunction::from_fn(&s, |x, v| {
            let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            let c = (2.0 * std::f64::consts::PI * x[0]).cos();
            crate::fields::eval_maxwellian(1.0, [0.0; 3], 1.0, v)
                * (1.02 + 0.2 * c * (-0.25 * v2).exp() + 0.01 * v[1])
        });
        let n = normalize_invariants(&mut f).unwrap();
        assert_eq!(n.scale, 1.0);
        for r in n.residual {
            assert!(r.abs() < 1e-13, "{r}");
        }
    }

    #[test]
    fn scenarios_share_equilibrium_invariants() {
        let s = space(1, 16, 16, 8.0);
        let near = near_equilibrium(&s, 0.01, 12.0).unwrap();
        let f = near.sub(&GridFunction::global_maxwellian(&s));
        let norm = weighted_linf_norm(&f, 12.0);
        assert!((norm - 0.01).abs() < 1e-10);
        for r in global_pairings(&near) {
            assert!(r.abs() < 1e-14);
        }

        let large = large_amplitude(&s, 0.9).unwrap();
        for r in global_pairings(&large) {
            assert!(r.abs() < 1e-13);
        }
        let dev = crate::diagnostics::macro_deviation(&compute_moments(&large).unwrap());
        assert!(dev > 0.2, "{dev}");
    }
}
