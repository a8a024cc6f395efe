//! Seeded property suites behind `bgk verify`.
//!
//! Reports contain residuals and tolerances only (no timings), so the same
//! suite and seed always produce the same text.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    GridConfig, OutputConfig, PhysicsConfig, Scenario, SimConfig, TimeConfig,
    DEFAULT_CHECKPOINT_EVERY, DEFAULT_N_THETA,
};
use crate::diagnostics::{
    fit_decay_rate, moment_bound_check, relative_entropy, relative_entropy_raw, DiagnosticsRecord,
};
use crate::error::{BgkError, Result};
use crate::fields::{
    cell_moments, compute_moments, conserved_from_primitive, discrete_maxwellian, eval_maxwellian,
    GridFunction, MacroState, PhaseSpace,
};
use crate::grid::{e5, SpatialGrid, VelocityGrid};
use crate::linearization::{hessian_m, linearization_terms, project, ThetaFields};
use crate::solver::{
    free_transport_density_floor, initial_state, phase_space, run, step_relax, RunOutput, Solver,
    SolverState,
};

pub const FREQUENCY_EXPONENTS: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (1.0, 0.5)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Linearization,
    Hessian,
    Conservation,
    Entropy,
    Regimes,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = [
        "linearization",
        "hessian",
        "conservation",
        "entropy",
        "regimes",
        "all",
    ];

    fn members(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![
                Suite::Linearization,
                Suite::Hessian,
                Suite::Conservation,
                Suite::Entropy,
                Suite::Regimes,
            ],
            s => vec![s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Linearization => "linearization",
            Suite::Hessian => "hessian",
            Suite::Conservation => "conservation",
            Suite::Entropy => "entropy",
            Suite::Regimes => "regimes",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = BgkError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linearization" => Ok(Suite::Linearization),
            "hessian" => Ok(Suite::Hessian),
            "conservation" => Ok(Suite::Conservation),
            "entropy" => Ok(Suite::Entropy),
            "regimes" => Ok(Suite::Regimes),
            "all" => Ok(Suite::All),
            other => Err(BgkError::InvalidParameter(format!(
                "unknown suite {other:?}; expected one of {}",
                Suite::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    AtMost,
    AtLeast,
    /// Reported only; always passes.
    Info,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub property: String,
    pub value: f64,
    pub bound: Bound,
    pub tolerance: f64,
}

impl Check {
    fn at_most(property: &str, value: f64, tolerance: f64) -> Self {
        Self {
            property: property.into(),
            value,
            bound: Bound::AtMost,
            tolerance,
        }
    }

    fn at_least(property: &str, value: f64, tolerance: f64) -> Self {
        Self {
            property: property.into(),
            value,
            bound: Bound::AtLeast,
            tolerance,
        }
    }

    fn info(property: &str, value: f64) -> Self {
        Self {
            property: property.into(),
            value,
            bound: Bound::Info,
            tolerance: f64::NAN,
        }
    }

    pub fn pass(&self) -> bool {
        match self.bound {
            Bound::AtMost => self.value <= self.tolerance,
            Bound::AtLeast => self.value >= self.tolerance,
            Bound::Info => true,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.pass() { "PASS" } else { "FAIL" };
        match self.bound {
            Bound::AtMost => write!(
                f,
                "{:<40} {:>24.16e} <= {:<10e} {status}",
                self.property, self.value, self.tolerance
            ),
            Bound::AtLeast => write!(
                f,
                "{:<40} {:>24.16e} >= {:<10e} {status}",
                self.property, self.value, self.tolerance
            ),
            Bound::Info => write!(f, "{:<40} {:>24.16e}    (reported)", self.property, self.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(Check::pass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.suites.iter().all(SuiteReport::pass)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed {}", self.seed);
        for suite in &self.suites {
            let _ = writeln!(s, "[{}]", suite.suite.name());
            for c in &suite.checks {
                let _ = writeln!(s, "  {c}");
            }
            let verdict = if suite.pass() { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "  => {verdict}");
        }
        let verdict = if self.pass() { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "overall {verdict}");
        s
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let mut suites = Vec::new();
    for (i, s) in suite.members().into_iter().enumerate() {
        // each suite draws from its own stream so results do not depend on
        // which other suites ran
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let checks = match s {
            Suite::Linearization => linearization_suite(&mut rng)?,
            Suite::Hessian => hessian_suite(&mut rng)?,
            Suite::Conservation => conservation_suite(&mut rng)?,
            Suite::Entropy => entropy_suite(&mut rng)?,
            Suite::Regimes => regimes_suite()?,
            Suite::All => unreachable!(),
        };
        suites.push(SuiteReport { suite: s, checks });
    }
    Ok(VerifyReport { seed, suites })
}

/// Invariants that a recorded run must satisfy: conservation drift, the
/// monotonicity of both entropies between records, and the entropy-split
/// bound against the initial relative entropy.
pub fn record_checks(records: &[DiagnosticsRecord]) -> Vec<Check> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let mut mass = 0.0_f64;
    let mut energy = 0.0_f64;
    let mut momentum = 0.0_f64;
    for r in records {
        mass = mass.max((r.mass - first.mass).abs() / first.mass.abs());
        energy = energy.max((r.energy - first.energy).abs() / first.energy.abs());
        for (x, y) in r.momentum.iter().zip(&first.momentum) {
            momentum = momentum.max((x - y).abs());
        }
    }
    let mut dh = f64::NEG_INFINITY;
    let mut de = f64::NEG_INFINITY;
    for w in records.windows(2) {
        dh = dh.max(w[1].boltzmann_h - w[0].boltzmann_h);
        de = de.max(w[1].relative_entropy - w[0].relative_entropy);
    }
    let split = records
        .iter()
        .map(|r| r.entropy_split - first.relative_entropy)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut checks = vec![
        Check::at_most("mass_relative_drift", mass, 1e-10),
        Check::at_most("energy_relative_drift", energy, 1e-10),
        Check::at_most("momentum_absolute_drift", momentum, 1e-10),
    ];
    if records.len() > 1 {
        checks.push(Check::at_most("max_h_increase_between_records", dh, 1e-12));
        checks.push(Check::at_most("max_relative_entropy_increase", de, 1e-12));
    }
    checks.push(Check::at_most("entropy_split_minus_initial", split, 1e-8));
    checks
}

/// Uniform draw from `rho in [0.5, 2]`, `|U| <= 1`, `T in [0.5, 2]`.
pub fn random_state(rng: &mut ChaCha8Rng) -> (f64, [f64; 3], f64) {
    let rho = rng.random_range(0.5..2.0);
    let t = rng.random_range(0.5..2.0);
    let u = loop {
        let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if u.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            break u;
        }
    };
    (rho, u, t)
}

/// Bounded multiplicative velocity perturbation `1 + s tanh(c0 + c . v + d e5(v))`.
#[derive(Debug, Clone, Copy)]
pub struct Perturbation {
    strength: f64,
    c: [f64; 5],
}

impl Perturbation {
    pub fn random(rng: &mut ChaCha8Rng, strength: f64) -> Self {
        Self {
            strength,
            c: std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
        }
    }

    pub fn factor(&self, v: [f64; 3]) -> f64 {
        let arg = self.c[0] + self.c[1] * v[0] + self.c[2] * v[1] + self.c[3] * v[2] + self.c[4] * e5(v);
        1.0 + self.strength * arg.tanh()
    }
}

/// One randomized non-Maxwellian cell per spatial cell:
/// `M(rho, U, T) (1 + s tanh(...))`.
pub fn random_distribution(space: &Arc<PhaseSpace>, rng: &mut ChaCha8Rng, strength: f64) -> GridFunction {
    let mut f = GridFunction::zeros(space);
    let nodes = space.velocity().nodes();
    for cell in 0..space.n_cells() {
        let (rho, u, t) = random_state(rng);
        let p = Perturbation::random(rng, strength);
        for (slot, &v) in f.cell_mut(cell).iter_mut().zip(nodes) {
            *slot = eval_maxwellian(rho, u, t, v) * p.factor(v);
        }
    }
    f
}

/// `mu (1 + r)` with a random bounded `r >= -0.9` per cell.
pub fn random_near_mu(space: &Arc<PhaseSpace>, rng: &mut ChaCha8Rng) -> GridFunction {
    let mut f = GridFunction::global_maxwellian(space);
    let nodes = space.velocity().nodes();
    for cell in 0..space.n_cells() {
        let p = Perturbation::random(rng, 0.9);
        for (slot, &v) in f.cell_mut(cell).iter_mut().zip(nodes) {
            *slot *= p.factor(v);
        }
    }
    f
}

fn default_space(cells: usize) -> Result<Arc<PhaseSpace>> {
    PhaseSpace::new(SpatialGrid::new(1, cells)?, VelocityGrid::new(24, 8.0)?)
}

/// Lattice for the decomposition checks. The path Maxwellians are analytic,
/// so the box must hold their tails (T up to 2, |U| up to 1) to well below
/// the checked tolerances.
pub const LINEARIZATION_LATTICE: (usize, f64) = (40, 11.0);

pub fn linearization_space(cells: usize) -> Result<Arc<PhaseSpace>> {
    let (n, v_max) = LINEARIZATION_LATTICE;
    PhaseSpace::new(SpatialGrid::new(1, cells)?, VelocityGrid::new(n, v_max)?)
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn linearization_suite(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let space = linearization_space(4)?;
    let mut checks = Vec::new();
    let mut worst_projection = 0.0_f64;
    let mut worst_gamma = 0.0_f64;
    for (a, b) in FREQUENCY_EXPONENTS {
        let mut worst = 0.0_f64;
        {
            let big_f = random_distribution(&space, rng, 0.5);
            let terms = linearization_terms(&big_f, a, b, DEFAULT_N_THETA)?;
            let report = crate::linearization::identity_report(&terms);
            worst = worst.max(report.relative_residual);

            let g = terms.gamma1.add(&terms.gamma2);
            let pg = project(&g).max_abs();
            worst_gamma = worst_gamma.max(pg / terms.collision.max_abs());

            let f = big_f.sub(&GridFunction::global_maxwellian(&space));
            let pf = project(&f);
            let scale = pf.max_abs().max(f64::MIN_POSITIVE);
            worst_projection = worst_projection.max(project(&pf).sub(&pf).max_abs() / scale);
        }
        checks.push(Check::at_most(
            &format!("identity_relative_residual(a={a},b={b})"),
            worst,
            1e-6,
        ));
    }
    checks.push(Check::at_most("projection_idempotence", worst_projection, 1e-10));
    checks.push(Check::at_most("projection_of_gamma_relative", worst_gamma, 1e-8));
    Ok(checks)
}

/// Central finite differences of the analytic Maxwellian in `(rho, rho U, G)`.
pub fn hessian_fd(c: [f64; 5], v: [f64; 3], h: f64) -> Result<[[f64; 5]; 5]> {
    let eval = |d: [f64; 5]| -> Result<f64> {
        let x: [f64; 5] = std::array::from_fn(|i| c[i] + d[i]);
        let s = MacroState::from_conserved(x[0], [x[1], x[2], x[3]], x[4])?;
        Ok(eval_maxwellian(s.rho, s.u, s.t, v))
    };
    let unit = |i: usize, s: f64| -> [f64; 5] {
        let mut d = [0.0; 5];
        d[i] = s;
        d
    };
    let f0 = eval([0.0; 5])?;
    let mut out = [[0.0; 5]; 5];
    for i in 0..5 {
        out[i][i] = (eval(unit(i, h))? - 2.0 * f0 + eval(unit(i, -h))?) / (h * h);
        for j in (i + 1)..5 {
            let pp: [f64; 5] = std::array::from_fn(|k| unit(i, h)[k] + unit(j, h)[k]);
            let pm: [f64; 5] = std::array::from_fn(|k| unit(i, h)[k] + unit(j, -h)[k]);
            let mp: [f64; 5] = std::array::from_fn(|k| unit(i, -h)[k] + unit(j, h)[k]);
            let mm: [f64; 5] = std::array::from_fn(|k| unit(i, -h)[k] + unit(j, -h)[k]);
            let d = (eval(pp)? - eval(pm)? - eval(mp)? + eval(mm)?) / (4.0 * h * h);
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}

/// `max |H - FD| / max |FD|` and `max |H - H^T| / max |H|` at one sample.
pub fn hessian_errors(rho: f64, u: [f64; 3], t: f64, v: [f64; 3]) -> Result<(f64, f64)> {
    let tf = ThetaFields::from_primitive(rho, u, t);
    let h = hessian_m(&tf, v);
    let (rho_u, g) = conserved_from_primitive(rho, u, t);
    let fd = hessian_fd([rho, rho_u[0], rho_u[1], rho_u[2], g], v, 1e-4)?;
    let mut diff = 0.0_f64;
    let mut scale = 0.0_f64;
    let mut asym = 0.0_f64;
    let mut hmax = 0.0_f64;
    for i in 0..5 {
        for j in 0..5 {
            diff = diff.max((h[i][j] - fd[i][j]).abs());
            scale = scale.max(fd[i][j].abs());
            asym = asym.max((h[i][j] - h[j][i]).abs());
            hmax = hmax.max(h[i][j].abs());
        }
    }
    Ok((diff / scale, asym / hmax))
}

fn hessian_suite(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut worst = 0.0_f64;
    let mut worst_sym = 0.0_f64;
    for _ in 0..1000 {
        let (rho, u, t) = random_state(rng);
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let (e, s) = hessian_errors(rho, u, t, v)?;
        worst = worst.max(e);
        worst_sym = worst_sym.max(s);
    }
    Ok(vec![
        Check::at_most("hessian_max_relative_fd_error", worst, 1e-5),
        Check::at_most("hessian_relative_asymmetry", worst_sym, 1e-10),
    ])
}

fn small_config(scenario: Scenario, dt: f64, t_final: f64) -> SimConfig {
    SimConfig {
        grid: GridConfig {
            dims: 1,
            cells_per_axis: 16,
            nodes_per_axis: 16,
            v_max: 8.0,
        },
        physics: PhysicsConfig {
            a: 1.0,
            b: 0.0,
            q: 12.0,
            delta: 0.1,
        },
        time: TimeConfig { dt, t_final },
        scenario,
        output: OutputConfig {
            dir: None,
            record_every: 1,
            n_theta: DEFAULT_N_THETA,
            svg: false,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        },
    }
}

fn scenario_run(scenario: Scenario, dt: f64, t_final: f64) -> Result<RunOutput> {
    let cfg = small_config(scenario, dt, t_final);
    let space = phase_space(&cfg)?;
    let state = initial_state(&cfg, &space)?;
    run(&cfg, state.f)
}

/// Worst per-cell moment of `M(F) - F` over `draws` random states.
pub fn cancellation_residual(space: &Arc<PhaseSpace>, rng: &mut ChaCha8Rng, draws: usize) -> Result<f64> {
    let grid = space.velocity();
    let mut worst = 0.0_f64;
    let mut done = 0;
    while done < draws {
        let f = random_distribution(space, rng, 0.5);
        let fields = compute_moments(&f)?;
        let (m, _) = discrete_maxwellian(&fields, space)?;
        let d = m.sub(&f);
        for cell in 0..space.n_cells() {
            let w = grid.weight();
            let mut acc = [0.0; 5];
            for (&x, v) in d.cell(cell).iter().zip(grid.nodes()) {
                acc[0] += x;
                acc[1] += x * v[0];
                acc[2] += x * v[1];
                acc[3] += x * v[2];
                acc[4] += x * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            }
            worst = worst.max(max_abs(&acc.map(|a| a * w)));
        }
        done += space.n_cells();
    }
    Ok(worst)
}

fn conservation_suite(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let out = scenario_run(Scenario::LargeAmplitude { amplitude: 0.9 }, 0.05, 2.0)?;
    let r0 = out.records[0];
    let mut mass = 0.0_f64;
    let mut energy = 0.0_f64;
    let mut momentum = 0.0_f64;
    for r in &out.records {
        mass = mass.max((r.mass - r0.mass).abs() / r0.mass);
        energy = energy.max((r.energy - r0.energy).abs() / r0.energy);
        for k in 0..3 {
            momentum = momentum.max((r.momentum[k] - r0.momentum[k]).abs());
        }
    }
    checks.push(Check::at_most("mass_relative_drift", mass, 1e-10));
    checks.push(Check::at_most("momentum_absolute_drift", momentum, 1e-10));
    checks.push(Check::at_most("energy_relative_drift", energy, 1e-10));

    let space = default_space(4)?;
    checks.push(Check::at_most(
        "cancellation_moment_residual",
        cancellation_residual(&space, rng, 100)?,
        1e-12,
    ));

    let f = random_distribution(&space, rng, 0.5);
    let g = step_relax(&f, rng.random_range(0.01..1.0), 1.0, 0.5)?;
    let mut relax = 0.0_f64;
    for cell in 0..space.n_cells() {
        let a = cell_moments(f.cell(cell), space.velocity(), cell)?;
        let b = cell_moments(g.cell(cell), space.velocity(), cell)?;
        for (x, y) in a.conserved().iter().zip(b.conserved()) {
            relax = relax.max((x - y).abs() / a.rho.max(1.0));
        }
    }
    checks.push(Check::at_most("relaxation_moment_drift", relax, 1e-12));

    let small = phase_space(&small_config(Scenario::Equilibrium, 0.1, 1.0))?;
    let mu = GridFunction::global_maxwellian(&small);
    let mut state = SolverState::new(mu.clone(), 0.0, 0)?;
    let solver = Solver::new(&small, 0.1, 1.0, 0.0)?;
    let mut fixed = 0.0_f64;
    for _ in 0..10 {
        solver.step(&mut state)?;
        fixed = fixed.max(state.f.sub(&mu).max_abs());
    }
    checks.push(Check::at_most("equilibrium_fixed_point", fixed, 1e-12));
    Ok(checks)
}

fn entropy_suite(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (label, scenario) in [
        ("large", Scenario::LargeAmplitude { amplitude: 0.9 }),
        ("near", Scenario::NearEquilibrium { amplitude: 0.01 }),
    ] {
        let out = scenario_run(scenario, 0.05, 2.0)?;
        let mut dh = f64::NEG_INFINITY;
        let mut de = f64::NEG_INFINITY;
        for w in out.records.windows(2) {
            dh = dh.max(w[1].boltzmann_h - w[0].boltzmann_h);
            de = de.max(w[1].relative_entropy - w[0].relative_entropy);
        }
        let e0 = out.records[0].relative_entropy;
        let split = out
            .records
            .iter()
            .map(|r| r.entropy_split - e0)
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::at_most(&format!("{label}_max_h_increase_per_step"), dh, 1e-12));
        checks.push(Check::at_most(
            &format!("{label}_max_relative_entropy_increase"),
            de,
            1e-12,
        ));
        checks.push(Check::at_most(&format!("{label}_entropy_split_minus_initial"), split, 1e-8));
        let raw = relative_entropy_raw(&out.state.f)?;
        let psi = relative_entropy(&out.state.f)?;
        checks.push(Check::at_most(
            &format!("{label}_relative_entropy_forms_gap"),
            (raw - psi).abs(),
            1e-10,
        ));
    }

    let space = default_space(4)?;
    let mut worst = 0.0_f64;
    for _ in 0..25 {
        let f = random_near_mu(&space, rng);
        worst = worst.max(moment_bound_check(&f, 12.0)?.max_ratio);
    }
    checks.push(Check::at_most("moment_bound_max_ratio_q12", worst, 1.0));
    Ok(checks)
}

fn regimes_suite() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let near = scenario_run(Scenario::NearEquilibrium { amplitude: 0.01 }, 0.1, 6.0)?;
    let series: Vec<(f64, f64)> = near.records.iter().map(|r| (r.time, r.linf_q_norm)).collect();
    let fit = fit_decay_rate(&series, 1.0)?;
    checks.push(Check::at_least("near_decay_rate_k", fit.k, f64::MIN_POSITIVE));
    checks.push(Check::at_least("near_decay_fit_r2", fit.r2, 0.95));

    let large = scenario_run(Scenario::LargeAmplitude { amplitude: 0.9 }, 0.1, 6.0)?;
    let initial = large.records[0].macro_deviation;
    checks.push(Check::at_least(
        "large_initial_macro_deviation",
        initial,
        2.0 * large.regime.delta,
    ));
    let final_dev = large.records.last().map(|r| r.macro_deviation).unwrap_or(f64::NAN);
    checks.push(Check::at_most(
        "large_final_macro_deviation",
        final_dev,
        2.0 * large.regime.delta,
    ));
    checks.push(Check::at_least(
        "large_crossing_reached",
        if large.regime.t_delta_crossing.is_some() { 1.0 } else { 0.0 },
        1.0,
    ));
    checks.push(Check::info(
        "large_t_delta_crossing",
        large.regime.t_delta_crossing.unwrap_or(f64::NAN),
    ));
    checks.push(Check::info("large_t_eq_predicted", large.regime.t_eq_predicted));
    let cfg = small_config(Scenario::LargeAmplitude { amplitude: 0.9 }, 0.1, 6.0);
    let f0 = initial_state(&cfg, &phase_space(&cfg)?)?.f;
    let times: Vec<f64> = (0..=10).map(f64::from).collect();
    let floor = free_transport_density_floor(&f0, &times)
        .into_iter()
        .map(|(_, rho)| rho)
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least("large_free_transport_density_floor", floor, 1e-3));
    checks.push(Check::info("large_m0", large.regime.m0));
    Ok(checks)
}
