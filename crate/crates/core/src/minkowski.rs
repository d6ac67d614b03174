//! Prescribing the quotient area measure: minimise
//! L_μ(h̄) = covol(h̄) − Σ_j h̄_j μ_j over τ-convex supports s = s_τ + h̄ω.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::body::DiscreteMeasure;
use crate::covolume::covolume_value;
use crate::error::{invalid, Error, Result};
use crate::invariant::{cosmological_extremes, MaximalDomain, TauBody, TorusGrid};
use crate::linalg::{conjugate_gradient, dot, pairwise_sum, Csr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// Descent on L_μ preconditioned by the symmetrised area Jacobian.
    Variational,
    /// Damped Newton on A(h̄) = μ with the total-variation residual as merit.
    Newton,
}

impl std::str::FromStr for SolveMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variational" => Ok(SolveMode::Variational),
            "newton" => Ok(SolveMode::Newton),
            _ => invalid(format!("unknown solver mode '{s}'")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinkowskiConfig {
    pub mode: SolveMode,
    /// Relative change of L_μ between accepted iterates.
    pub l_tol: f64,
    /// ‖A − μ‖_TV relative to the total mass of μ.
    pub tv_tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub armijo: f64,
    /// Starting body s_τ + t·ω; `None` uses t₀ = (μ_total/vol_Σ)^{1/2}.
    pub initial_offset: Option<f64>,
}

impl Default for MinkowskiConfig {
    fn default() -> Self {
        MinkowskiConfig { mode: SolveMode::Variational, l_tol: 1e-7, tv_tol: 2e-2, max_iter: 200, max_backtracks: 30, armijo: 1e-4, initial_offset: None }
    }
}

#[derive(Clone, Debug)]
pub struct MinkowskiProblem {
    pub mu: DiscreteMeasure,
    pub torus: Arc<TorusGrid>,
    pub dmax: MaximalDomain,
    pub config: MinkowskiConfig,
}

impl MinkowskiProblem {
    pub fn new(mu: DiscreteMeasure, torus: Arc<TorusGrid>, dmax: MaximalDomain, config: MinkowskiConfig) -> Result<Self> {
        if mu.mass.len() != torus.len() {
            return invalid("measure does not live on the torus grid");
        }
        if mu.mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return invalid("measure masses must be finite and nonnegative");
        }
        if dmax.coboundary_vector().is_none() {
            return invalid("the solver needs a coboundary instance");
        }
        if !(config.tv_tol > 0.0 && config.l_tol > 0.0 && config.armijo > 0.0 && config.armijo < 1.0) {
            return invalid("solver tolerances must be positive");
        }
        Ok(MinkowskiProblem { mu, torus, dmax, config })
    }

    /// L_μ at h̄ with its area masses.
    pub fn objective(&self, hbar: &[f64], area: &[f64]) -> f64 {
        let terms: Vec<f64> = hbar.iter().zip(area).zip(&self.mu.mass).map(|((h, a), m)| h * a / 3.0 - h * m).collect();
        pairwise_sum(&terms)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub l_value: f64,
    /// ‖A − μ‖_TV / max(μ_total, 1e−6·vol_Σ).
    pub residual: f64,
    pub step: f64,
    pub convexify_passes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveTrace {
    pub mode: SolveMode,
    pub steps: Vec<TraceStep>,
    pub converged: bool,
    /// Support values at the torus nodes.
    pub final_support: Vec<f64>,
}

impl SolveTrace {
    pub fn l_values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.l_value).collect()
    }
}

/// Weighted sup distance ‖(s − s')/ω‖_∞ between two bodies on one grid.
pub fn weighted_sup_distance(a: &TauBody, b: &TauBody) -> Result<f64> {
    if a.hbar.len() != b.hbar.len() {
        return invalid("bodies live on different grids");
    }
    Ok(a.hbar.iter().zip(&b.hbar).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Grid tolerance for recovered supports: one θ-cell.
pub fn grid_tolerance(torus: &TorusGrid) -> f64 {
    torus.h()
}

/// (J + Jᵀ)/2 + shift·I.
fn preconditioner(jac: &Csr, shift: f64) -> Csr {
    let mut rows: Vec<Vec<(usize, f64)>> = (0..jac.n).map(|i| vec![(i, shift)]).collect();
    for i in 0..jac.n {
        for (j, v) in jac.row(i) {
            rows[i].push((j, 0.5 * v));
            rows[j].push((i, 0.5 * v));
        }
    }
    Csr::from_rows(rows)
}

fn shifted(jac: &Csr, shift: f64) -> Csr {
    let rows = (0..jac.n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = jac.row(i).collect();
            row.push((i, shift));
            row
        })
        .collect();
    Csr::from_rows(rows)
}

/// Solve the Minkowski problem for μ; returns the body and its trace.
pub fn solve_minkowski(problem: &MinkowskiProblem) -> Result<(TauBody, SolveTrace)> {
    let torus = &problem.torus;
    let cfg = &problem.config;
    let v = problem.dmax.coboundary_vector().expect("checked in MinkowskiProblem::new");
    let vol = torus.sigma_volume();
    let mu = &problem.mu.mass;
    let mu_total = pairwise_sum(mu);
    let floor = 1e-6 * vol;
    let t0 = cfg.initial_offset.unwrap_or_else(|| (mu_total / vol).sqrt());
    if !(t0.is_finite() && t0 >= 0.0) {
        return invalid("initial offset must be nonnegative");
    }
    let mut hbar = vec![t0; torus.len()];
    let mut passes = torus.convexify(&mut hbar);
    let mut area = torus.area(&hbar);
    let mut l = problem.objective(&hbar, &area);
    let tv_of = |a: &[f64]| {
        let d: Vec<f64> = a.iter().zip(mu).map(|(a, m)| (a - m).abs()).collect();
        pairwise_sum(&d) / mu_total.max(floor)
    };
    let mut tv = tv_of(&area);
    let mut steps = Vec::new();
    let mut last_dl: Option<f64> = None;
    let mut shift_rel = 1e-10;
    let mut failures = 0;
    let mut step = 0.0;
    let mut converged = false;
    for it in 0..=cfg.max_iter {
        steps.push(TraceStep { iteration: it, l_value: l, residual: tv, step, convexify_passes: passes });
        let l_ok = match last_dl {
            Some(dl) => dl < cfg.l_tol,
            None => tv == 0.0,
        };
        if tv < cfg.tv_tol && l_ok {
            converged = true;
            break;
        }
        if it == cfg.max_iter {
            break;
        }
        let grad: Vec<f64> = area.iter().zip(mu).map(|(a, m)| a - m).collect();
        let jac = torus.area_jacobian(&hbar);
        let scale = jac.diag().iter().copied().fold(0.0, f64::max).max(floor);
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let dir = match cfg.mode {
            SolveMode::Variational => conjugate_gradient(&preconditioner(&jac, shift_rel * scale), &neg, 1e-10, 4 * torus.len()).0,
            SolveMode::Newton => match shifted(&jac, shift_rel * scale).solve_lu(&neg) {
                Ok(d) => d,
                Err(_) => {
                    shift_rel *= 10.0;
                    failures += 1;
                    if failures >= 10 {
                        return Err(Error::NonConvergence(format!("Newton systems stayed singular after {failures} attempts")));
                    }
                    continue;
                }
            },
        };
        let slope = dot(&grad, &dir);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let mut cand: Vec<f64> = hbar.iter().zip(&dir).map(|(h, d)| (h + alpha * d).max(0.0)).collect();
            let p = torus.convexify(&mut cand);
            let a = torus.area(&cand);
            let lc = problem.objective(&cand, &a);
            let tvc = tv_of(&a);
            let ok = match cfg.mode {
                SolveMode::Variational => slope < 0.0 && lc <= l + cfg.armijo * alpha * slope,
                SolveMode::Newton => tvc <= (1.0 - cfg.armijo * alpha) * tv,
            };
            if ok {
                accepted = Some((cand, a, lc, tvc, p));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, a, lc, tvc, p)) => {
                last_dl = Some((lc - l).abs() / lc.abs().max(floor));
                hbar = cand;
                area = a;
                l = lc;
                tv = tvc;
                passes = p;
                step = alpha;
                failures = 0;
            }
            None => {
                if tv < cfg.tv_tol {
                    // Stationary to round-off.
                    converged = true;
                    break;
                }
                failures += 1;
                shift_rel *= 10.0;
                if failures >= 10 {
                    return Err(Error::NonConvergence(format!(
                        "no descent for {failures} consecutive line searches (L = {l:.6e}, residual = {tv:.3e})"
                    )));
                }
            }
        }
    }
    let body = TauBody::new(torus.clone(), v, hbar)?;
    let final_support = (0..torus.len()).map(|j| body.support(j)).collect();
    Ok((body, SolveTrace { mode: cfg.mode, steps, converged, final_support }))
}

#[derive(Clone, Debug, Serialize)]
pub struct MinkowskiResidual {
    /// A(K)(cell) − μ(cell).
    pub per_cell: Vec<f64>,
    pub total: f64,
    pub total_variation: f64,
}

pub fn residual(body: &TauBody, mu: &DiscreteMeasure) -> Result<MinkowskiResidual> {
    if mu.mass.len() != body.hbar.len() {
        return invalid("measure and body use different grids");
    }
    let per_cell: Vec<f64> = body.area().iter().zip(&mu.mass).map(|(a, m)| a - m).collect();
    let abs: Vec<f64> = per_cell.iter().map(|x| x.abs()).collect();
    Ok(MinkowskiResidual { total: pairwise_sum(&per_cell), total_variation: pairwise_sum(&abs), per_cell })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContactAdvisory {
    pub t_min: f64,
    pub t_max: f64,
    pub total_area: f64,
    pub threshold: f64,
    /// ∂K may touch ∂D_τ.
    pub flagged: bool,
}

/// Flags bodies whose cosmological time drops below three grid cells.
pub fn boundary_contact_guard(body: &TauBody, dmax: &MaximalDomain) -> Result<ContactAdvisory> {
    let (t_min, t_max) = cosmological_extremes(body, dmax)?;
    let threshold = 3.0 * body.torus.h();
    Ok(ContactAdvisory { t_min, t_max, total_area: pairwise_sum(&body.area()), threshold, flagged: t_min < threshold })
}

/// Covolume of the solved body, for reporting.
pub fn solution_covolume(body: &TauBody) -> f64 {
    covolume_value(&body.torus, &body.hbar, 8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{default_lattice_eigenvalues, simplicial_lattice_instance};
    use crate::invariant::{maximal_domain, LogChart};
    use crate::sphere::AffineSphere;

    fn setup(n: usize) -> (Arc<TorusGrid>, MaximalDomain) {
        let (cone, action) = simplicial_lattice_instance(&default_lattice_eigenvalues(), &[1.0, 0.0, 0.0], 1).unwrap();
        let torus = Arc::new(TorusGrid::new(LogChart::from_action(&cone, &action).unwrap(), n).unwrap());
        let sphere = AffineSphere::closed_form(&cone, 33).unwrap();
        (torus, maximal_domain(&action, &sphere, None).unwrap())
    }

    #[test]
    fn sigma_offset_is_recovered() {
        let (torus, dmax) = setup(16);
        let mu = torus.sigma_measure().scaled(0.25);
        for mode in [SolveMode::Variational, SolveMode::Newton] {
            let cfg = MinkowskiConfig { mode, initial_offset: Some(1.0), ..Default::default() };
            let (b, trace) = solve_minkowski(&MinkowskiProblem::new(mu.clone(), torus.clone(), dmax.clone(), cfg).unwrap()).unwrap();
            assert!(trace.converged);
            assert!(b.hbar.iter().all(|h| (h - 0.5).abs() < 1e-3));
        }
    }

    #[test]
    fn residual_of_offset_against_zero() {
        let (torus, dmax) = setup(16);
        let b = TauBody::sigma_offset(torus.clone(), dmax.coboundary_vector().unwrap(), 0.5);
        let zero = torus.sigma_measure().scaled(0.0);
        let r = residual(&b, &zero).unwrap();
        assert!((r.total / (0.25 * torus.sigma_volume()) - 1.0).abs() < 1e-3);
        let r2 = residual(&b, &torus.sigma_measure().scaled(0.5)).unwrap();
        let r1 = residual(&b, &torus.sigma_measure().scaled(0.25)).unwrap();
        assert!(((r2.total - r.total) - 2.0 * (r1.total - r.total)).abs() < 1e-12);
    }

    #[test]
    fn contact_guard_flags_maximal_domain() {
        let (torus, dmax) = setup(16);
        let v = dmax.coboundary_vector().unwrap();
        assert!(boundary_contact_guard(&TauBody::sigma_offset(torus.clone(), v, 0.0), &dmax).unwrap().flagged);
        let g = boundary_contact_guard(&TauBody::sigma_offset(torus, v, 0.5), &dmax).unwrap();
        assert!(!g.flagged && (g.t_min - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_mass() {
        let (torus, dmax) = setup(16);
        let mu = torus.sigma_measure().scaled(-1.0);
        assert!(MinkowskiProblem::new(mu, torus, dmax, MinkowskiConfig::default()).is_err());
    }
}
