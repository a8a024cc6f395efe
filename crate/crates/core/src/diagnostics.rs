//! Scalar functionals of a distribution: conserved totals, entropies,
//! weighted norms, macroscopic deviation and decay-rate fitting.
//!
//! Every sum over phase space is reduced per cell and then accumulated
//! sequentially in cell order, so results do not depend on the thread count.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{BgkError, Result};
use crate::fields::{compute_moments, GridFunction, MacroFields};

/// Values in `[-NEGATIVE_TOLERANCE, 0)` count as zero in entropy integrands.
pub const NEGATIVE_TOLERANCE: f64 = 1e-14;

/// `C_q = 1/5 + 1/(q - 5)`.
pub fn c_q(q: f64) -> f64 {
    0.2 + 1.0 / (q - 5.0)
}

/// `1 + |v|^q`.
#[inline]
pub fn velocity_weight(v: [f64; 3], q: f64) -> f64 {
    let s = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    1.0 + s.powf(q)
}

/// Sums `per_cell(cell, values)` over all cells, in cell order.
fn reduce_cells<T, F>(f: &GridFunction, per_cell: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[f64]) -> Result<T> + Sync + Send,
{
    f.values()
        .par_chunks(f.space().n_nodes())
        .enumerate()
        .map(|(cell, vals)| per_cell(cell, vals))
        .collect()
}

fn measure(f: &GridFunction) -> f64 {
    f.space().spatial().cell_volume() * f.space().velocity().weight()
}

fn nonnegative(x: f64, cell: usize, node: usize) -> Result<f64> {
    if x >= 0.0 {
        Ok(x)
    } else if x >= -NEGATIVE_TOLERANCE {
        Ok(0.0)
    } else {
        Err(BgkError::NegativeDistribution {
            cell,
            node,
            value: x,
        })
    }
}

/// `max (1 + |v|^q) |f|` over all cells and nodes.
pub fn weighted_linf_norm(f: &GridFunction, q: f64) -> f64 {
    let space = f.space();
    let weights: Vec<f64> = space
        .velocity()
        .nodes()
        .iter()
        .map(|&v| velocity_weight(v, q))
        .collect();
    f.values()
        .par_chunks(space.n_nodes())
        .map(|cell| {
            cell.iter()
                .zip(&weights)
                .fold(0.0_f64, |m, (x, w)| m.max(w * x.abs()))
        })
        .reduce(|| 0.0, f64::max)
}

/// Totals of mass, momentum and energy `int |v|^2 F`.
pub fn conserved_totals(big_f: &GridFunction) -> [f64; 5] {
    let nodes = big_f.space().velocity().nodes();
    let parts = reduce_cells(big_f, |_, vals| {
        let mut acc = [0.0; 5];
        for (&x, v) in vals.iter().zip(nodes) {
            acc[0] += x;
            acc[1] += x * v[0];
            acc[2] += x * v[1];
            acc[3] += x * v[2];
            acc[4] += x * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        }
        Ok(acc)
    })
    .expect("infallible");
    let w = measure(big_f);
    let mut total = [0.0; 5];
    for p in &parts {
        for i in 0..5 {
            total[i] += p[i];
        }
    }
    total.map(|t| t * w)
}

/// `int F ln F` with `0 ln 0 = 0`.
pub fn boltzmann_h(big_f: &GridFunction) -> Result<f64> {
    let parts = reduce_cells(big_f, |cell, vals| {
        let mut s = 0.0;
        for (node, &x) in vals.iter().enumerate() {
            let x = nonnegative(x, cell, node)?;
            if x > 0.0 {
                s += x * x.ln();
            }
        }
        Ok(s)
    })?;
    Ok(parts.iter().sum::<f64>() * measure(big_f))
}

/// `int psi(F / mu) mu` with `psi(x) = x ln x - x + 1`.
pub fn relative_entropy(big_f: &GridFunction) -> Result<f64> {
    let mu = big_f.space().mu();
    let parts = reduce_cells(big_f, |cell, vals| {
        let mut s = 0.0;
        for (node, (&x, &m)) in vals.iter().zip(mu).enumerate() {
            let x = nonnegative(x, cell, node)?;
            s += if x > 0.0 {
                x * (x / m).ln() - x + m
            } else {
                m
            };
        }
        Ok(s)
    })?;
    Ok(parts.iter().sum::<f64>() * measure(big_f))
}

/// `int F ln F - mu ln mu`; equals [`relative_entropy`] when `F` shares the
/// conserved totals of `mu`.
pub fn relative_entropy_raw(big_f: &GridFunction) -> Result<f64> {
    let mu = big_f.space().mu();
    let parts = reduce_cells(big_f, |cell, vals| {
        let mut s = 0.0;
        for (node, (&x, &m)) in vals.iter().zip(mu).enumerate() {
            let x = nonnegative(x, cell, node)?;
            if x > 0.0 {
                s += x * x.ln();
            }
            s -= m * m.ln();
        }
        Ok(s)
    })?;
    Ok(parts.iter().sum::<f64>() * measure(big_f))
}

/// `int |f|^2 / (4 mu) 1_{|f| <= mu} + |f| / 4 1_{|f| > mu}`.
pub fn entropy_split(f: &GridFunction) -> f64 {
    let mu = f.space().mu();
    let parts = reduce_cells(f, |_, vals| {
        let mut s = 0.0;
        for (&x, &m) in vals.iter().zip(mu) {
            let a = x.abs();
            s += if a <= m { a * a / (4.0 * m) } else { 0.25 * a };
        }
        Ok(s)
    })
    .expect("infallible");
    parts.iter().sum::<f64>() * measure(f)
}

/// `max over cells of max(|rho - 1|, |U|, |T - 1|)`.
pub fn macro_deviation(fields: &MacroFields) -> f64 {
    fields.cells.iter().fold(0.0_f64, |m, c| {
        let u = (c.u[0] * c.u[0] + c.u[1] * c.u[1] + c.u[2] * c.u[2]).sqrt();
        m.max((c.rho - 1.0).abs()).max(u).max((c.t - 1.0).abs())
    })
}

/// `max over cells of rho / T^{3/2}`, divided by `max F`.
pub fn pp_ratio(fields: &MacroFields, big_f: &GridFunction) -> f64 {
    let peak = fields
        .cells
        .iter()
        .fold(0.0_f64, |m, c| m.max(c.rho / c.t.powf(1.5)));
    let sup = big_f.max_abs();
    if sup > 0.0 {
        peak / sup
    } else {
        f64::INFINITY
    }
}

pub fn check_regime_parameters(q: f64, delta: f64) -> Result<()> {
    let mut problems = Vec::new();
    if !(q > 10.0) || !q.is_finite() {
        problems.push(format!("q must exceed 10, got {q}"));
    }
    if !(delta > 0.0 && delta < 1.0 / 3.0) {
        problems.push(format!("delta must lie in (0, 1/3), got {delta}"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(BgkError::InvalidParameter(problems.join("; ")))
    }
}

/// `ln(4 C_q M0 / delta)`.
pub fn t_eq_predicted(m0: f64, delta: f64, q: f64) -> Result<f64> {
    check_regime_parameters(q, delta)?;
    if !(m0 > 0.0) {
        return Err(BgkError::InvalidParameter(format!(
            "M0 must be positive, got {m0}"
        )));
    }
    Ok((4.0 * c_q(q) * m0 / delta).ln())
}

/// Outcome of the moment bound `(rho, |rho U|, 3 rho T + rho |U|^2) <= C_q ||F||_{inf,q}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentBoundReport {
    pub q: f64,
    pub rhs: f64,
    /// Largest per-cell value of each moment.
    pub max_lhs: [f64; 3],
    /// `max_lhs / rhs`.
    pub ratios: [f64; 3],
    pub max_ratio: f64,
    pub pass: bool,
}

pub fn moment_bound_check(big_f: &GridFunction, q: f64) -> Result<MomentBoundReport> {
    if !(q > 5.0) {
        return Err(BgkError::InvalidParameter(format!(
            "moment bound needs q > 5, got {q}"
        )));
    }
    let fields = compute_moments(big_f)?;
    let rhs = c_q(q) * weighted_linf_norm(big_f, q);
    let mut max_lhs = [0.0_f64; 3];
    for c in &fields.cells {
        let m = (c.rho_u[0] * c.rho_u[0] + c.rho_u[1] * c.rho_u[1] + c.rho_u[2] * c.rho_u[2]).sqrt();
        max_lhs[0] = max_lhs[0].max(c.rho);
        max_lhs[1] = max_lhs[1].max(m);
        max_lhs[2] = max_lhs[2].max(c.energy());
    }
    let ratios = max_lhs.map(|l| l / rhs);
    let max_ratio = ratios.iter().fold(0.0_f64, |a, &b| a.max(b));
    Ok(MomentBoundReport {
        q,
        rhs,
        max_lhs,
        ratios,
        max_ratio,
        pass: max_ratio <= 1.0,
    })
}

/// Least-squares fit of `ln y = ln C - k t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub k: f64,
    pub c: f64,
    pub r2: f64,
    pub t_start: f64,
    pub points: usize,
}

impl fmt::Display for DecayFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "t_start {:.16e}", self.t_start)?;
        writeln!(f, "points {}", self.points)?;
        writeln!(f, "k {:.16e}", self.k)?;
        writeln!(f, "C {:.16e}", self.c)?;
        writeln!(f, "r2 {:.16e}", self.r2)
    }
}

pub const MIN_FIT_POINTS: usize = 10;

pub fn fit_decay_rate(series: &[(f64, f64)], t_start: f64) -> Result<DecayFit> {
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= t_start)
        .collect();
    if window.len() < MIN_FIT_POINTS {
        return Err(BgkError::DecayFit(format!(
            "need at least {MIN_FIT_POINTS} points with t >= {t_start}, got {}",
            window.len()
        )));
    }
    if let Some(&(t, y)) = window.iter().find(|&&(_, y)| !(y > 0.0) || !y.is_finite()) {
        return Err(BgkError::DecayFit(format!(
            "norm must be positive and finite, got {y} at t = {t}"
        )));
    }
    let n = window.len() as f64;
    let tm = window.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = window.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let mut stt = 0.0;
    let mut stl = 0.0;
    let mut sll = 0.0;
    for &(t, y) in &window {
        let dt = t - tm;
        let dl = y.ln() - lm;
        stt += dt * dt;
        stl += dt * dl;
        sll += dl * dl;
    }
    if stt == 0.0 {
        return Err(BgkError::DecayFit("all fit times coincide".into()));
    }
    let slope = stl / stt;
    let intercept = lm - slope * tm;
    let ss_res: f64 = window
        .iter()
        .map(|&(t, y)| {
            let e = y.ln() - (intercept + slope * t);
            e * e
        })
        .sum();
    let r2 = if sll > 0.0 { 1.0 - ss_res / sll } else { 1.0 };
    Ok(DecayFit {
        k: -slope,
        c: intercept.exp(),
        r2,
        t_start,
        points: window.len(),
    })
}

/// One row of the diagnostics time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    pub boltzmann_h: f64,
    pub relative_entropy: f64,
    pub entropy_split: f64,
    pub linf_q_norm: f64,
    pub macro_deviation: f64,
    pub pp_ratio: f64,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "time",
    "mass",
    "mom_x",
    "mom_y",
    "mom_z",
    "energy",
    "H",
    "rel_entropy",
    "entropy_split",
    "linf_q",
    "macro_dev",
    "pp_ratio",
];

impl DiagnosticsRecord {
    pub fn compute(big_f: &GridFunction, time: f64, q: f64) -> Result<Self> {
        let fields = compute_moments(big_f)?;
        Self::with_fields(big_f, &fields, time, q)
    }

    /// Same as [`compute`](Self::compute) with moments already at hand.
    pub fn with_fields(
        big_f: &GridFunction,
        fields: &MacroFields,
        time: f64,
        q: f64,
    ) -> Result<Self> {
        let totals = conserved_totals(big_f);
        let f = big_f.sub(&GridFunction::global_maxwellian(big_f.space()));
        Ok(Self {
            time,
            mass: totals[0],
            momentum: [totals[1], totals[2], totals[3]],
            energy: totals[4],
            boltzmann_h: boltzmann_h(big_f)?,
            relative_entropy: relative_entropy(big_f)?,
            entropy_split: entropy_split(&f),
            linf_q_norm: weighted_linf_norm(&f, q),
            macro_deviation: macro_deviation(fields),
            pp_ratio: pp_ratio(fields, big_f),
        })
    }

    /// Values in [`CSV_COLUMNS`] order.
    pub fn to_row(&self) -> [f64; 12] {
        [
            self.time,
            self.mass,
            self.momentum[0],
            self.momentum[1],
            self.momentum[2],
            self.energy,
            self.boltzmann_h,
            self.relative_entropy,
            self.entropy_split,
            self.linf_q_norm,
            self.macro_deviation,
            self.pp_ratio,
        ]
    }

    pub fn from_row(row: &[f64; 12]) -> Self {
        Self {
            time: row[0],
            mass: row[1],
            momentum: [row[2], row[3], row[4]],
            energy: row[5],
            boltzmann_h: row[6],
            relative_entropy: row[7],
            entropy_split: row[8],
            linf_q_norm: row[9],
            macro_deviation: row[10],
            pp_ratio: row[11],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_row().iter().all(|x| x.is_finite())
    }
}

/// Comparison of the observed macroscopic transition with the predicted
/// equilibration time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeReport {
    pub t_eq_predicted: f64,
    /// First recorded time after which `macro_deviation <= 2 delta` holds
    /// for the rest of the run.
    pub t_delta_crossing: Option<f64>,
    pub delta: f64,
    pub m0: f64,
    pub q: f64,
}

impl RegimeReport {
    pub fn from_records(records: &[DiagnosticsRecord], delta: f64, q: f64) -> Result<Self> {
        let m0 = records
            .first()
            .map(|r| r.linf_q_norm)
            .ok_or_else(|| BgkError::InvalidParameter("no diagnostics recorded".into()))?;
        let t_eq = if m0 > 0.0 {
            t_eq_predicted(m0, delta, q)?
        } else {
            check_regime_parameters(q, delta)?;
            f64::NEG_INFINITY
        };
        Ok(Self {
            t_eq_predicted: t_eq,
            t_delta_crossing: delta_crossing(records, 2.0 * delta),
            delta,
            m0,
            q,
        })
    }
}

/// Earliest recorded time from which `macro_deviation <= threshold` holds
/// through the last record.
pub fn delta_crossing(records: &[DiagnosticsRecord], threshold: f64) -> Option<f64> {
    let mut crossing = None;
    for r in records.iter().rev() {
        if r.macro_deviation <= threshold {
            crossing = Some(r.time);
        } else {
            break;
        }
    }
    crossing
}

impl fmt::Display for RegimeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "q {:.16e}", self.q)?;
        writeln!(f, "delta {:.16e}", self.delta)?;
        writeln!(f, "M0 {:.16e}", self.m0)?;
        writeln!(f, "t_eq_predicted {:.16e}", self.t_eq_predicted)?;
        match self.t_delta_crossing {
            Some(t) => writeln!(f, "t_delta_crossing {t:.16e}"),
            None => writeln!(f, "t_delta_crossing not reached"),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fields::{MacroState, PhaseSpace};
    use crate::grid::{SpatialGrid, VelocityGrid};

    fn space(cells: usize, nodes: usize, v_max: f64) -> Arc<PhaseSpace> {
        PhaseSpace::new(
            SpatialGrid::new(1, cells).unwrap(),
            VelocityGrid::new(nodes, v_max).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn weighted_norm_examples() {
        let s = space(4, 16, 8.0);
        assert_eq!(weighted_linf_norm(&GridFunction::zeros(&s), 12.0), 0.0);

        // analytic mu at the node closest to the origin, weight 2 everywhere
        let f = GridFunction::from_fn(&s, |_, v| {
            crate::fields::eval_maxwellian(1.0, [0.0; 3], 1.0, v)
        });
        let v0 = s.velocity().axis()[8];
        let expected = 2.0 * crate::fields::eval_maxwellian(1.0, [0.0; 3], 1.0, [v0; 3]);
        assert_eq!(weighted_linf_norm(&f, 0.0), expected);
        let peak = 2.0 * (2.0 * std::f64::consts::PI).powf(-1.5);
        assert!((peak - 0.126_987).abs() < 1e-6);

        let mut g = GridFunction::zeros(&s);
        let corner = s.velocity().corner_index();
        g.cell_mut(2)[corner] = 1e-3;
        let v = s.velocity().nodes()[corner];
        let r = (3.0 * v[0] * v[0]).sqrt();
        let want = 1e-3 * (1.0 + r.powf(12.0));
        assert!((weighted_linf_norm(&g, 12.0) - want).abs() <= 1e-15 * want);
    }

    #[test]
    fn entropies_vanish_at_equilibrium() {
        let s = space(4, 16, 8.0);
        let mu = GridFunction::global_maxwellian(&s);
        assert_eq!(relative_entropy(&mu).unwrap(), 0.0);
        assert!(relative_entropy_raw(&mu).unwrap().abs() < 1e-15);
        assert_eq!(entropy_split(&GridFunction::zeros(&s)), 0.0);
    }

    #[test]
    fn entropy_split_tie_goes_to_quadratic_branch() {
        let s = space(4, 16, 8.0);
        let f = GridFunction::global_maxwellian(&s);
        let mass = conserved_totals(&f)[0];
        let v = entropy_split(&f);
        assert!((v - 0.25 * mass).abs() < 1e-14);
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn negative_values_are_reported() {
        let s = space(4, 8, 6.0);
        let mut f = GridFunction::global_maxwellian(&s);
        f.cell_mut(3)[5] = -1e-15;
        assert!(relative_entropy(&f).is_ok());
        f.cell_mut(3)[5] = -1e-6;
        match boltzmann_h(&f) {
            Err(BgkError::NegativeDistribution { cell, node, .. }) => {
                assert_eq!((cell, node), (3, 5))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn macro_deviation_examples() {
        let eq = MacroState::equilibrium();
        let mut cells = vec![eq; 8];
        assert_eq!(macro_deviation(&MacroFields { cells: cells.clone() }), 0.0);
        cells[3] = MacroState::from_primitive(1.1, [0.0; 3], 1.0);
        assert!((macro_deviation(&MacroFields { cells }) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn t_eq_examples() {
        let t = t_eq_predicted(10.0, 0.1, 12.0).unwrap();
        assert!((c_q(12.0) - 12.0 / 35.0).abs() < 1e-15);
        assert!((t - 137.142_857_142_857_14_f64.ln()).abs() < 1e-12);
        assert!((t - 4.921_023_135_406_568).abs() < 1e-12);

        let m0 = std::f64::consts::E * 0.1 / (4.0 * c_q(12.0));
        assert!((t_eq_predicted(m0, 0.1, 12.0).unwrap() - 1.0).abs() < 1e-14);

        let d = t_eq_predicted(20.0, 0.1, 12.0).unwrap() - t;
        assert!((d - std::f64::consts::LN_2).abs() < 1e-14);

        assert!(t_eq_predicted(10.0, 0.1, 10.0).is_err());
        assert!(t_eq_predicted(10.0, 0.4, 12.0).is_err());
        assert!(t_eq_predicted(10.0, 0.0, 12.0).is_err());
    }

    #[test]
    fn moment_bound_for_global_maxwellian() {
        let s = space(4, 24, 8.0);
        let mu = GridFunction::global_maxwellian(&s);
        let r = moment_bound_check(&mu, 12.0).unwrap();
        assert!(r.pass && r.max_ratio < 1.0);
        let near5 = moment_bound_check(&mu, 5.0 + 1e-9).unwrap();
        assert!(near5.max_ratio < 1e-6);
    }

    #[test]
    fn moment_bound_needs_the_sphere_area() {
        // a dense cold Maxwellian violates the bound with the bare constant
        // but respects it once the 4 pi of the radial integral is restored
        let s = space(2, 32, 4.0);
        let f = GridFunction::from_fn(&s, |_, v| {
            crate::fields::eval_maxwellian(2.0, [0.0; 3], 0.2, v)
        });
        let r = moment_bound_check(&f, 12.0).unwrap();
        assert!(!r.pass && r.max_ratio > 2.0, "{r:?}");
        assert!(r.max_ratio / (4.0 * std::f64::consts::PI) <= 1.0);
    }

    #[test]
    fn decay_fit_exact_and_flat() {
        let series: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.5;
                (t, 3.0 * (-0.7 * t).exp())
            })
            .collect();
        let fit = fit_decay_rate(&series, 0.0).unwrap();
        assert!((fit.k - 0.7).abs() < 1e-10);
        assert!((fit.c - 3.0).abs() < 1e-10);

        let flat: Vec<(f64, f64)> = (0..12).map(|i| (i as f64, 2.5)).collect();
        assert_eq!(fit_decay_rate(&flat, 0.0).unwrap().k, 0.0);

        assert!(fit_decay_rate(&series[..5], 0.0).is_err());
        let mut bad = series.clone();
        bad[15].1 = 0.0;
        assert!(fit_decay_rate(&bad, 0.0).is_err());
    }

    #[test]
    fn crossing_requires_staying_below() {
        let mk = |t: f64, d: f64| DiagnosticsRecord {
            time: t,
            mass: 1.0,
            momentum: [0.0; 3],
            energy: 3.0,
            boltzmann_h: 0.0,
            relative_entropy: 0.0,
            entropy_split: 0.0,
            linf_q_norm: 1.0,
            macro_deviation: d,
            pp_ratio: 1.0,
        };
        let recs = vec![mk(0.0, 0.5), mk(1.0, 0.1), mk(2.0, 0.3), mk(3.0, 0.15), mk(4.0, 0.05)];
        assert_eq!(delta_crossing(&recs, 0.2), Some(3.0));
        assert_eq!(delta_crossing(&recs[..3], 0.2), None);
    }
}
