//! Exact decomposition of the relaxation operator around the global
//! Maxwellian:
//!
//! ```text
//! nu (M(F) - F) = (P f - f) + Gamma1(f) + Gamma2(f),   F = mu + f
//! ```
//!
//! `P` projects onto the collision invariants, `Gamma1` couples the
//! linearized collision frequency to `P f - f`, and `Gamma2` carries the
//! second derivative of the Maxwellian in the conserved variables
//! `c = (rho, rho U, G)` integrated along the straight path
//! `c(theta) = (1, 0, 0) + theta (c - (1, 0, 0))`.

use std::fmt::Write as _;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use rayon::prelude::*;

use crate::error::{BgkError, Result};
use crate::fields::{
    check_frequency_exponents, compute_moments, discrete_maxwellian, eval_maxwellian,
    GridFunction, MacroFields, MacroState, PhaseSpace,
};

const SQRT_2_3: f64 = 0.816_496_580_927_726;

pub type Matrix5 = [[f64; 5]; 5];

/// Macroscopic state on the transition path at parameter `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaFields {
    pub theta: f64,
    pub rho: f64,
    pub u: [f64; 3],
    pub t: f64,
    pub g: f64,
}

impl ThetaFields {
    pub fn state(&self) -> MacroState {
        MacroState {
            rho: self.rho,
            u: self.u,
            t: self.t,
            rho_u: [self.rho * self.u[0], self.rho * self.u[1], self.rho * self.u[2]],
            g: self.g,
        }
    }

    /// Builds path fields from an arbitrary primitive state (used by tests
    /// and oracles that sample states directly).
    pub fn from_primitive(rho: f64, u: [f64; 3], t: f64) -> Self {
        let s = MacroState::from_primitive(rho, u, t);
        Self {
            theta: f64::NAN,
            rho,
            u,
            t,
            g: s.g,
        }
    }
}

/// Interpolates the conserved variables linearly between `(1, 0, 0)` and the
/// cell state and converts back to `(rho, U, T)`.
pub fn theta_transition(state: &MacroState, theta: f64) -> Result<ThetaFields> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(BgkError::InvalidParameter(format!(
            "theta must lie in [0, 1], got {theta}"
        )));
    }
    if theta == 0.0 {
        return Ok(ThetaFields {
            theta,
            rho: 1.0,
            u: [0.0; 3],
            t: 1.0,
            g: 0.0,
        });
    }
    if theta == 1.0 {
        return Ok(ThetaFields {
            theta,
            rho: state.rho,
            u: state.u,
            t: state.t,
            g: state.g,
        });
    }
    let rho = theta * state.rho + (1.0 - theta);
    let m = state.rho_u.map(|x| theta * x);
    let g = theta * state.g;
    let u = m.map(|x| x / rho);
    let m2 = m[0] * m[0] + m[1] * m[1] + m[2] * m[2];
    let t = SQRT_2_3 * g / rho - m2 / (3.0 * rho * rho) + 1.0;
    if !(t > 0.0) {
        return Err(BgkError::NonPositiveTemperature {
            cell: 0,
            temperature: t,
        });
    }
    Ok(ThetaFields {
        theta,
        rho,
        u,
        t,
        g,
    })
}

/// `K = d(rho, U, T) / d(rho, rho U, G)`, the inverse of the Jacobian of the
/// conserved variables with respect to the primitive ones.
pub fn inverse_jacobian(tf: &ThetaFields) -> Matrix5 {
    let ThetaFields { rho, u, t, .. } = *tf;
    let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let mut k = [[0.0; 5]; 5];
    k[0][0] = 1.0;
    for i in 0..3 {
        k[i + 1][0] = -u[i] / rho;
        k[i + 1][i + 1] = 1.0 / rho;
        k[4][i + 1] = -2.0 / 3.0 * u[i] / rho;
    }
    k[4][0] = (u2 - 3.0 * t + 3.0) / (3.0 * rho);
    k[4][4] = SQRT_2_3 / rho;
    k
}

/// Gradient of `nu = rho^a T^b` with respect to `(rho, rho U, G)` on the path.
///
/// Integrating `A(theta) . (c - c0)` over `[0, 1]` gives `nu - 1`.
pub fn a_coefficients(tf: &ThetaFields, a: f64, b: f64) -> [f64; 5] {
    let ThetaFields { rho, t, .. } = *tf;
    let d_rho = if a == 0.0 { 0.0 } else { a * rho.powf(a - 1.0) * t.powf(b) };
    let d_t = if b == 0.0 { 0.0 } else { b * rho.powf(a) * t.powf(b - 1.0) };
    let k = inverse_jacobian(tf);
    // chain rule: d nu / d c_j = sum_k (d nu / d p_k) K_kj
    std::array::from_fn(|j| d_rho * k[0][j] + d_t * k[4][j])
}

/// First and second derivatives of `ln M` with respect to the conserved
/// variables.
fn log_maxwellian_derivatives(tf: &ThetaFields, v: [f64; 3]) -> ([f64; 5], Matrix5) {
    let ThetaFields { rho, u, t, .. } = *tf;
    let d = [v[0] - u[0], v[1] - u[1], v[2] - u[2]];
    let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];

    // derivatives of ln M in (rho, U, T)
    let gp = [
        1.0 / rho,
        d[0] / t,
        d[1] / t,
        d[2] / t,
        -1.5 / t + d2 / (2.0 * t * t),
    ];
    let mut lp = [[0.0; 5]; 5];
    lp[0][0] = -1.0 / (rho * rho);
    for i in 0..3 {
        lp[i + 1][i + 1] = -1.0 / t;
        lp[i + 1][4] = -d[i] / (t * t);
        lp[4][i + 1] = lp[i + 1][4];
    }
    lp[4][4] = 1.5 / (t * t) - d2 / (t * t * t);

    let k = inverse_jacobian(tf);
    let mut grad = [0.0; 5];
    for (j, gj) in grad.iter_mut().enumerate() {
        *gj = (0..5).map(|p| gp[p] * k[p][j]).sum();
    }

    // K^T L K
    let mut lk = [[0.0; 5]; 5];
    for p in 0..5 {
        for j in 0..5 {
            lk[p][j] = (0..5).map(|q| lp[p][q] * k[q][j]).sum();
        }
    }
    let mut hess = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            hess[i][j] = (0..5).map(|p| k[p][i] * lk[p][j]).sum();
        }
    }

    // curvature of the map c -> (rho, U, T), weighted by d ln M / d p
    let r2 = rho * rho;
    for i in 0..3 {
        let gu = gp[i + 1];
        hess[0][0] += gu * 2.0 * u[i] / r2;
        hess[0][i + 1] -= gu / r2;
        hess[i + 1][0] -= gu / r2;
    }
    let gt = gp[4];
    hess[0][0] += gt * 2.0 / r2 * (t - 1.0 - 2.0 / 3.0 * u2);
    for i in 0..3 {
        hess[0][i + 1] += gt * 4.0 * u[i] / (3.0 * r2);
        hess[i + 1][0] += gt * 4.0 * u[i] / (3.0 * r2);
        hess[i + 1][i + 1] -= gt * 2.0 / (3.0 * r2);
    }
    hess[0][4] -= gt * SQRT_2_3 / r2;
    hess[4][0] -= gt * SQRT_2_3 / r2;

    (grad, hess)
}

/// Gradient of the Maxwellian at `v` with respect to `(rho, rho U, G)`.
pub fn gradient_m(tf: &ThetaFields, v: [f64; 3]) -> [f64; 5] {
    let m = eval_maxwellian(tf.rho, tf.u, tf.t, v);
    let (grad, _) = log_maxwellian_derivatives(tf, v);
    grad.map(|x| x * m)
}

/// Hessian of the Maxwellian at `v` with respect to `(rho, rho U, G)`:
/// `M (grad ln M grad ln M^T + hess ln M)`.
pub fn hessian_m(tf: &ThetaFields, v: [f64; 3]) -> Matrix5 {
    let m = eval_maxwellian(tf.rho, tf.u, tf.t, v);
    let (grad, hess) = log_maxwellian_derivatives(tf, v);
    let mut out = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            out[i][j] = m * (grad[i] * grad[j] + hess[i][j]);
        }
    }
    out
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
pub fn theta_rule(n_theta: usize) -> Result<Vec<(f64, f64)>> {
    let degree = NonZeroUsize::new(n_theta)
        .ok_or_else(|| BgkError::InvalidParameter("n_theta must be positive".into()))?;
    let rule = GaussLegendre::new(degree);
    let mut out: Vec<(f64, f64)> = rule
        .nodes()
        .zip(rule.weights())
        .map(|(&x, &w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Pairings `<f, e_i>_v` for every cell.
pub fn projection_coefficients(f: &GridFunction) -> Vec<[f64; 5]> {
    let space = f.space();
    let basis = space.basis().values();
    let w = space.velocity().weight();
    f.values()
        .par_chunks(space.n_nodes())
        .map(|cell| {
            let mut c = [0.0; 5];
            for (&x, e) in cell.iter().zip(basis) {
                for i in 0..5 {
                    c[i] += x * e[i];
                }
            }
            c.map(|ci| ci * w)
        })
        .collect()
}

fn expand_on_basis(space: &Arc<PhaseSpace>, coeffs: &[[f64; 5]]) -> GridFunction {
    let mut out = GridFunction::zeros(space);
    let basis = space.basis().values();
    let mu = space.mu();
    out.values_mut()
        .par_chunks_mut(space.n_nodes())
        .zip(coeffs)
        .for_each(|(cell, c)| {
            for ((slot, e), &m) in cell.iter_mut().zip(basis).zip(mu) {
                let s: f64 = (0..5).map(|i| c[i] * e[i]).sum();
                *slot = s * m;
            }
        });
    out
}

/// `P f = sum_i <f, e_i> e_i mu` with the discrete global Maxwellian.
pub fn project(f: &GridFunction) -> GridFunction {
    let coeffs = projection_coefficients(f);
    expand_on_basis(f.space(), &coeffs)
}

/// `Gamma1(f) = (P f - f) sum_i [int_0^1 A_i(theta) d theta] <f, e_i>`.
pub fn gamma1(
    f: &GridFunction,
    fields: &MacroFields,
    a: f64,
    b: f64,
    n_theta: usize,
) -> Result<GridFunction> {
    check_frequency_exponents(a, b)?;
    let rule = theta_rule(n_theta)?;
    let coeffs = projection_coefficients(f);
    let pf = expand_on_basis(f.space(), &coeffs);

    let factors = fields
        .cells
        .par_iter()
        .zip(&coeffs)
        .map(|(state, c)| {
            let mut s = 0.0;
            for &(theta, w) in &rule {
                let tf = theta_transition(state, theta)?;
                let a_i = a_coefficients(&tf, a, b);
                s += w * (0..5).map(|i| a_i[i] * c[i]).sum::<f64>();
            }
            Ok(s)
        })
        .collect::<Result<Vec<f64>>>()?;

    let n = f.space().n_nodes();
    let mut out = pf.sub(f);
    out.values_mut()
        .par_chunks_mut(n)
        .zip(&factors)
        .for_each(|(cell, &s)| cell.iter_mut().for_each(|x| *x *= s));
    Ok(out)
}

/// `Gamma2(f) = rho^a T^b sum_ij [int_0^1 H_ij(theta) (1 - theta) d theta] <f,e_i><f,e_j>`
/// with `H` the Hessian of the Maxwellian in `(rho, rho U, G)`.
pub fn gamma2(
    f: &GridFunction,
    fields: &MacroFields,
    a: f64,
    b: f64,
    n_theta: usize,
) -> Result<GridFunction> {
    check_frequency_exponents(a, b)?;
    let rule = theta_rule(n_theta)?;
    let coeffs = projection_coefficients(f);
    let space = f.space();
    let nodes = space.velocity().nodes();
    let mut out = GridFunction::zeros(space);

    out.values_mut()
        .par_chunks_mut(space.n_nodes())
        .zip(fields.cells.par_iter())
        .zip(coeffs.par_iter())
        .try_for_each(|((cell, state), c)| -> Result<()> {
            let nu = state.rho.powf(a) * state.t.powf(b);
            for &(theta, w) in &rule {
                let tf = theta_transition(state, theta)?;
                let weight = w * (1.0 - theta);
                for (slot, &v) in cell.iter_mut().zip(nodes) {
                    let h = hessian_m(&tf, v);
                    let mut q = 0.0;
                    for i in 0..5 {
                        for j in 0..5 {
                            q += h[i][j] * c[i] * c[j];
                        }
                    }
                    *slot += weight * q;
                }
            }
            cell.iter_mut().for_each(|x| *x *= nu);
            Ok(())
        })?;
    Ok(out)
}

/// All pieces of the decomposition for one distribution.
#[derive(Debug, Clone)]
pub struct LinearizationTerms {
    /// `nu (M(F) - F)` with the moment-matched discrete Maxwellian.
    pub collision: GridFunction,
    pub pf_minus_f: GridFunction,
    pub gamma1: GridFunction,
    pub gamma2: GridFunction,
}

impl LinearizationTerms {
    pub fn residual(&self) -> GridFunction {
        let mut r = self.collision.clone();
        for (((x, p), g1), g2) in r
            .values_mut()
            .iter_mut()
            .zip(self.pf_minus_f.values())
            .zip(self.gamma1.values())
            .zip(self.gamma2.values())
        {
            *x -= p + g1 + g2;
        }
        r
    }
}

pub fn linearization_terms(
    big_f: &GridFunction,
    a: f64,
    b: f64,
    n_theta: usize,
) -> Result<LinearizationTerms> {
    let space = big_f.space();
    let fields = compute_moments(big_f)?;
    let f = big_f.sub(&GridFunction::global_maxwellian(space));
    let (maxwellian, _) = discrete_maxwellian(&fields, space)?;
    let nu: Vec<f64> = fields
        .cells
        .iter()
        .map(|c| c.rho.powf(a) * c.t.powf(b))
        .collect();
    let mut collision = maxwellian.sub(big_f);
    collision
        .values_mut()
        .par_chunks_mut(space.n_nodes())
        .zip(&nu)
        .for_each(|(cell, &n)| cell.iter_mut().for_each(|x| *x *= n));

    let pf_minus_f = project(&f).sub(&f);
    let g1 = gamma1(&f, &fields, a, b, n_theta)?;
    let g2 = gamma2(&f, &fields, a, b, n_theta)?;
    Ok(LinearizationTerms {
        collision,
        pf_minus_f,
        gamma1: g1,
        gamma2: g2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResidual {
    pub cell: usize,
    pub max_residual: f64,
    pub relative_residual: f64,
}

/// Residual of the decomposition identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub max_residual: f64,
    pub l2_residual: f64,
    pub relative_residual: f64,
    pub per_cell: Vec<CellResidual>,
}

impl IdentityReport {
    /// One line per cell: index, max residual, relative residual.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.per_cell {
            let _ = writeln!(
                s,
                "{} {:.17e} {:.17e}",
                c.cell, c.max_residual, c.relative_residual
            );
        }
        s
    }
}

/// Evaluates `nu (M(F) - F) - (P f - f) - Gamma1(f) - Gamma2(f)` nodewise.
pub fn verify_linearization_identity(
    big_f: &GridFunction,
    a: f64,
    b: f64,
    n_theta: usize,
) -> Result<IdentityReport> {
    let terms = linearization_terms(big_f, a, b, n_theta)?;
    Ok(identity_report(&terms))
}

pub fn identity_report(terms: &LinearizationTerms) -> IdentityReport {
    let space = terms.collision.space();
    let n = space.n_nodes();
    let r = terms.residual();
    let lhs_norm = terms.collision.max_abs();
    let rel = |x: f64| if lhs_norm > 0.0 { x / lhs_norm } else { x };

    let per_cell: Vec<CellResidual> = r
        .values()
        .chunks(n)
        .enumerate()
        .map(|(cell, vals)| {
            let m = vals.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
            CellResidual {
                cell,
                max_residual: m,
                relative_residual: rel(m),
            }
        })
        .collect();
    let max_residual = r.max_abs();
    let dv = space.velocity().weight() * space.spatial().cell_volume();
    let l2 = r.values().iter().map(|x| x * x).sum::<f64>() * dv;
    IdentityReport {
        max_residual,
        l2_residual: l2.sqrt(),
        relative_residual: rel(max_residual),
        per_cell,
    }
}
