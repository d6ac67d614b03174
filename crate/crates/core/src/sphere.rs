//! The hyperbolic affine sphere asymptotic to a cone, through its support
//! function ω on Ω*: det Hess ω = (−ω)^{−d−2}, ω = 0 on ∂Ω*.
//!
//! The solver works with w = (−ω)^{1/q}, which is smooth up to the boundary
//! for q = 1/2 (round cone) and q = 1/(d+1) (simplicial cone). In terms of w
//! the equation reads
//!
//! det(−w Hess w + (1−q)∇w∇wᵀ) = q^{−d} w^{2d − 2q(d+1)},
//!
//! discretized with cubic-exact one-sided stencils at cut cells and solved by
//! damped Newton.

use serde::Serialize;

use crate::cone::ConeModel;
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridFn};
use crate::linalg::{fornberg, Csr};

#[derive(Clone, Debug)]
pub struct SphereConfig {
    /// Nodes per axis on the square grid covering Ω*.
    pub n: usize,
    /// Stop when the sup norm of the Newton update falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl SphereConfig {
    pub fn new(n: usize) -> Self {
        SphereConfig { n, tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SphereDiagnostics {
    pub source: String,
    pub iterations: usize,
    /// ‖G(w)‖₂ before each Newton step.
    pub residual_norms: Vec<f64>,
    /// Sup norm of each accepted update.
    pub update_norms: Vec<f64>,
    pub step_lengths: Vec<f64>,
    /// Largest relative MA residual at nodes ≥ 2 cells from ∂Ω*.
    pub final_residual: f64,
    /// Smallest C with |ω| ≤ C·dist^{1/2} over the grid.
    pub boundary_constant: f64,
}

/// Affine-sphere support function sampled on a grid over Ω*.
#[derive(Clone, Debug)]
pub struct AffineSphere {
    pub cone: ConeModel,
    pub omega: GridFn,
    /// w = (−ω)^{1/q} at masked nodes.
    pub w: Vec<f64>,
    pub grad_w: Vec<[f64; 2]>,
    pub grad_omega: Vec<[f64; 2]>,
    /// Hessian entries (xx, yy, xy).
    pub hess_omega: Vec<[f64; 3]>,
    /// Relative residual det Hess ω · (−ω)^{d+2} − 1.
    pub residual: Vec<f64>,
    pub sigma_density: Vec<f64>,
    pub diagnostics: SphereDiagnostics,
    closed_form: bool,
}

const DIRS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

struct Stencils {
    ids: Vec<usize>,
    second: [Vec<Vec<(usize, f64)>>; 4],
    first: [Vec<Vec<(usize, f64)>>; 2],
}

fn build_stencils(cone: &ConeModel, grid: &Grid, unknown: &[Option<usize>]) -> Stencils {
    let h = grid.h();
    let ids: Vec<usize> = (0..grid.len()).filter(|&i| unknown[i].is_some()).collect();
    let mut second: [Vec<Vec<(usize, f64)>>; 4] = Default::default();
    let mut first: [Vec<Vec<(usize, f64)>>; 2] = Default::default();
    for &node in &ids {
        let p = grid.point2(node);
        for (m, &(vi, vj)) in DIRS.iter().enumerate() {
            // Points along the grid line: (offset in steps, unknown id or None
            // for the boundary crossing where w = 0).
            let mut pts: Vec<(f64, Option<usize>)> = vec![(0.0, unknown[node])];
            for sgn in [1isize, -1] {
                for s in 1..=3isize {
                    match grid.offset2(node, sgn * s * vi, sgn * s * vj).and_then(|j| unknown[j]) {
                        Some(u) => pts.push(((sgn * s) as f64, Some(u))),
                        None => {
                            let v = [(sgn * vi) as f64 * h, (sgn * vj) as f64 * h];
                            pts.push((sgn as f64 * cone.exit_param(&p, &v), None));
                            break;
                        }
                    }
                }
            }
            pts.sort_by(|a, b| a.0.abs().partial_cmp(&b.0.abs()).unwrap());
            let has = |o: f64| pts.iter().any(|t| (t.0 - o).abs() < 1e-12 && t.1.is_some());
            let sel: Vec<(f64, Option<usize>)> = if has(1.0) && has(-1.0) {
                pts.iter().filter(|t| t.0.abs() <= 1.0 + 1e-12 && t.1.is_some()).copied().collect()
            } else {
                pts.iter().take(4).copied().collect()
            };
            second[m].push(weights(&sel, 2, h));
            if m < 2 {
                let sel: Vec<(f64, Option<usize>)> = if has(2.0) && has(-2.0) { pts.iter().take(5).copied().collect() } else { pts.iter().take(4).copied().collect() };
                first[m].push(weights(&sel, 1, h));
            }
        }
    }
    Stencils { ids, second, first }
}

fn weights(sel: &[(f64, Option<usize>)], order: usize, h: f64) -> Vec<(usize, f64)> {
    let z: Vec<f64> = sel.iter().map(|t| t.0).collect();
    let w = fornberg(&z, order);
    let scale = h.powi(order as i32);
    sel.iter().zip(w).filter_map(|(t, w)| t.1.map(|u| (u, w / scale))).collect()
}

fn apply(row: &[(usize, f64)], w: &[f64]) -> f64 {
    row.iter().map(|&(j, c)| c * w[j]).sum()
}

struct Fields {
    g: Vec<f64>,
    m: Vec<[f64; 3]>,
    grad: Vec<[f64; 2]>,
}

struct Problem {
    st: Stencils,
    q: f64,
    e: f64,
    k: f64,
}

impl Problem {
    fn fields(&self, w: &[f64]) -> Fields {
        let n = w.len();
        let (q, e, k) = (self.q, self.e, self.k);
        let mut g = vec![0.0; n];
        let mut m = vec![[0.0; 3]; n];
        let mut grad = vec![[0.0; 2]; n];
        for r in 0..n {
            let d: Vec<f64> = (0..4).map(|s| apply(&self.st.second[s][r], w)).collect();
            let gx = apply(&self.st.first[0][r], w);
            let gy = apply(&self.st.first[1][r], w);
            let hxy = (d[2] - d[3]) / 4.0;
            let m11 = -w[r] * d[0] + (1.0 - q) * gx * gx;
            let m22 = -w[r] * d[1] + (1.0 - q) * gy * gy;
            let m12 = -w[r] * hxy + (1.0 - q) * gx * gy;
            g[r] = m11 * m22 - m12 * m12 - k * w[r].max(0.0).powf(e);
            m[r] = [m11, m22, m12];
            grad[r] = [gx, gy];
        }
        Fields { g, m, grad }
    }

    fn jacobian(&self, w: &[f64], f: &Fields) -> Csr {
        let (q, e, k) = (self.q, self.e, self.k);
        let st = &self.st;
        let rows = (0..w.len())
            .map(|r| {
                let [m11, m22, m12] = f.m[r];
                let [gx, gy] = f.grad[r];
                let d: Vec<f64> = (0..4).map(|s| apply(&st.second[s][r], w)).collect();
                let hxy = (d[2] - d[3]) / 4.0;
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(48);
                // dm11 = −hxx e_r − w S2x + 2(1−q) gx S1x
                row.push((r, -m22 * d[0] - m11 * d[1] + 2.0 * m12 * hxy - k * e * w[r].max(1e-300).powf(e - 1.0)));
                for &(j, c) in &st.second[0][r] {
                    row.push((j, -m22 * w[r] * c));
                }
                for &(j, c) in &st.second[1][r] {
                    row.push((j, -m11 * w[r] * c));
                }
                for &(j, c) in &st.second[2][r] {
                    row.push((j, 2.0 * m12 * w[r] * c / 4.0));
                }
                for &(j, c) in &st.second[3][r] {
                    row.push((j, -2.0 * m12 * w[r] * c / 4.0));
                }
                for &(j, c) in &st.first[0][r] {
                    row.push((j, m22 * 2.0 * (1.0 - q) * gx * c - 2.0 * m12 * (1.0 - q) * gy * c));
                }
                for &(j, c) in &st.first[1][r] {
                    row.push((j, m11 * 2.0 * (1.0 - q) * gy * c - 2.0 * m12 * (1.0 - q) * gx * c));
                }
                row
            })
            .collect();
        Csr::from_rows(rows)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solve for the affine sphere of `cone` on a square grid covering Ω*.
pub fn solve_affine_sphere(cone: &ConeModel, config: &SphereConfig) -> Result<AffineSphere> {
    if cone.d != 2 {
        return invalid("the affine-sphere solver is implemented for d = 2");
    }
    if config.n < 33 {
        return invalid("grid must have at least 33 nodes per axis");
    }
    let (lo, hi) = cone.omega_star_box();
    let grid = Grid::covering(&lo, &hi, config.n)?;
    let margin = 1e-12;
    let mut unknown = vec![None; grid.len()];
    let mut count = 0;
    for (i, u) in unknown.iter_mut().enumerate() {
        if cone.boundary_distance(&grid.point2(i)) > margin {
            *u = Some(count);
            count += 1;
        }
    }
    let st = build_stencils(cone, &grid, &unknown);
    let d = 2.0;
    let q = cone.boundary_exponent();
    let prob = Problem { st, q, e: 2.0 * d - 2.0 * q * (d + 1.0), k: q.powf(-d) };
    let n = count;

    // Torsion-function start: Δw = −1 with w = 0 on ∂Ω*.
    let lap = Csr::from_rows(
        (0..n)
            .map(|r| {
                let mut row = prob.st.second[0][r].clone();
                row.extend_from_slice(&prob.st.second[1][r]);
                row
            })
            .collect(),
    );
    let mut w0 = lap.solve_lu(&vec![-1.0; n])?;
    let wmax = w0.iter().copied().fold(0.0, f64::max);
    if wmax <= 0.0 {
        return Err(Error::NonConvergence("torsion start is not positive".into()));
    }
    w0.iter_mut().for_each(|v| *v /= wmax);
    let mut best = (f64::INFINITY, 1.0);
    for s in 0..60 {
        let c = 0.05 + s as f64 * (3.0 - 0.05) / 59.0;
        let wc: Vec<f64> = w0.iter().map(|v| c * v).collect();
        let r = norm2(&prob.fields(&wc).g);
        if r < best.0 {
            best = (r, c);
        }
    }
    let mut w: Vec<f64> = w0.iter().map(|v| best.1 * v).collect();

    let mut diag = SphereDiagnostics { source: "newton".into(), ..Default::default() };
    let mut converged = false;
    for it in 0..config.max_iter {
        let f = prob.fields(&w);
        let r0 = norm2(&f.g);
        diag.residual_norms.push(r0);
        let jac = prob.jacobian(&w, &f);
        let rhs: Vec<f64> = f.g.iter().map(|v| -v).collect();
        let dw = jac.solve_lu(&rhs)?;
        let mut lam = 1.0;
        let mut next;
        loop {
            next = w.iter().zip(&dw).map(|(a, b)| a + lam * b).collect::<Vec<f64>>();
            if next.iter().all(|&v| v > 0.0) && norm2(&prob.fields(&next).g) < (1.0 - 1e-4 * lam) * r0 {
                break;
            }
            lam *= 0.5;
            if lam < 1e-8 {
                break;
            }
        }
        let upd = dw.iter().fold(0.0f64, |a, b| a.max(b.abs())) * lam;
        if lam < 1e-8 {
            if r0 <= 1e-10 * (n as f64).sqrt() {
                converged = true;
                diag.iterations = it;
                break;
            }
            return Err(Error::NonConvergence(format!("line search stalled at iteration {it}, residual {r0:.3e}")));
        }
        w = next;
        diag.update_norms.push(upd);
        diag.step_lengths.push(lam);
        diag.iterations = it + 1;
        if upd < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!("no convergence in {} Newton iterations", config.max_iter)));
    }
    diag.residual_norms.push(norm2(&prob.fields(&w).g));

    let f = prob.fields(&w);
    let mut values = vec![0.0; grid.len()];
    let mut mask = vec![false; grid.len()];
    let mut wfull = vec![0.0; grid.len()];
    let mut grad_w = vec![[0.0; 2]; grid.len()];
    let mut grad_omega = vec![[0.0; 2]; grid.len()];
    let mut hess_omega = vec![[0.0; 3]; grid.len()];
    let mut residual = vec![0.0; grid.len()];
    let mut sigma = vec![0.0; grid.len()];
    for (r, &node) in prob.st.ids.iter().enumerate() {
        let wr = w[r];
        let om = -wr.powf(q);
        values[node] = om;
        mask[node] = true;
        wfull[node] = wr;
        grad_w[node] = f.grad[r];
        let gfac = -q * wr.powf(q - 1.0);
        grad_omega[node] = [gfac * f.grad[r][0], gfac * f.grad[r][1]];
        let hfac = q * wr.powf(q - 2.0);
        let [m11, m22, m12] = f.m[r];
        hess_omega[node] = [hfac * m11, hfac * m22, hfac * m12];
        residual[node] = f.g[r] / (prob.k * wr.powf(prob.e));
        sigma[node] = (-om).powf(-3.0);
    }
    let omega = GridFn { grid, values, mask, convex: true };
    Ok(finish(cone, omega, wfull, grad_w, grad_omega, hess_omega, residual, sigma, diag, false))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cone: &ConeModel,
    omega: GridFn,
    w: Vec<f64>,
    grad_w: Vec<[f64; 2]>,
    grad_omega: Vec<[f64; 2]>,
    hess_omega: Vec<[f64; 3]>,
    residual: Vec<f64>,
    sigma_density: Vec<f64>,
    mut diagnostics: SphereDiagnostics,
    closed_form: bool,
) -> AffineSphere {
    let h = omega.grid.h();
    let mut worst: f64 = 0.0;
    let mut bc: f64 = 0.0;
    for i in 0..omega.grid.len() {
        if !omega.mask[i] {
            continue;
        }
        let dist = cone.boundary_distance(&omega.grid.point2(i));
        bc = bc.max(omega.values[i].abs() / dist.sqrt());
        if dist >= 2.0 * h {
            worst = worst.max(residual[i].abs());
        }
    }
    diagnostics.final_residual = worst;
    diagnostics.boundary_constant = bc;
    AffineSphere { cone: cone.clone(), omega, w, grad_w, grad_omega, hess_omega, residual, sigma_density, diagnostics, closed_form }
}

impl AffineSphere {
    /// Sphere sampled from the closed form of a built-in cone on the same
    /// grid the solver would use.
    pub fn closed_form(cone: &ConeModel, n: usize) -> Result<Self> {
        if cone.d != 2 {
            return invalid("closed-form sampling is implemented for d = 2");
        }
        let (lo, hi) = cone.omega_star_box();
        let grid = Grid::covering(&lo, &hi, n)?;
        Self::closed_form_on(cone, grid)
    }

    /// Sphere sampled from the closed form on an arbitrary grid.
    pub fn closed_form_on(cone: &ConeModel, grid: Grid) -> Result<Self> {
        let q = cone.boundary_exponent();
        let len = grid.len();
        let mut values = vec![0.0; len];
        let mut mask = vec![false; len];
        let mut w = vec![0.0; len];
        let mut grad_w = vec![[0.0; 2]; len];
        let mut grad_omega = vec![[0.0; 2]; len];
        let mut hess_omega = vec![[0.0; 3]; len];
        let mut residual = vec![0.0; len];
        let mut sigma = vec![0.0; len];
        for i in 0..len {
            let y = grid.point2(i);
            if cone.boundary_distance(&y) <= 1e-12 {
                continue;
            }
            let Some((om, g, hs)) = cone.omega2(y) else { continue };
            mask[i] = true;
            values[i] = om;
            let wi = (-om).powf(1.0 / q);
            w[i] = wi;
            // ∇w = −(1/q) w^{1−q} ∇ω
            let f = -(1.0 / q) * wi.powf(1.0 - q);
            grad_w[i] = [f * g[0], f * g[1]];
            grad_omega[i] = g;
            hess_omega[i] = hs;
            residual[i] = (hs[0] * hs[1] - hs[2] * hs[2]) * (-om).powi(4) - 1.0;
            sigma[i] = (-om).powf(-3.0);
        }
        let omega = GridFn { grid, values, mask, convex: true };
        let diag = SphereDiagnostics { source: "closed-form".into(), ..Default::default() };
        Ok(finish(cone, omega, w, grad_w, grad_omega, hess_omega, residual, sigma, diag, true))
    }

    pub fn grid(&self) -> &Grid {
        &self.omega.grid
    }

    pub fn is_closed_form(&self) -> bool {
        self.closed_form
    }

    fn bilinear(&self, y: [f64; 2], field: impl Fn(usize) -> f64) -> Result<f64> {
        let g = self.grid();
        let h = g.h();
        let fx = (y[0] - g.lo[0]) / h;
        let fy = (y[1] - g.lo[1]) / g.spacing(1);
        if fx < 0.0 || fy < 0.0 || fx >= (g.shape[0] - 1) as f64 || fy >= (g.shape[1] - 1) as f64 {
            return Err(Error::OutOfDomain(format!("{y:?} is outside the sphere grid")));
        }
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let n1 = g.shape[1];
        let idx = [i * n1 + j, (i + 1) * n1 + j, i * n1 + j + 1, (i + 1) * n1 + j + 1];
        if idx.iter().any(|&k| !self.omega.mask[k]) {
            return Err(Error::OutOfDomain(format!("{y:?} is too close to the boundary for interpolation")));
        }
        Ok((1.0 - tx) * (1.0 - ty) * field(idx[0]) + tx * (1.0 - ty) * field(idx[1]) + (1.0 - tx) * ty * field(idx[2]) + tx * ty * field(idx[3]))
    }

    /// ω at an arbitrary point of Ω*: closed form when available, otherwise
    /// bilinear interpolation of the smooth variable w.
    pub fn omega_at(&self, y: [f64; 2]) -> Result<f64> {
        if !self.cone.inside(&y) {
            return Err(Error::OutOfDomain(format!("{y:?} is not in the dual domain")));
        }
        if self.closed_form {
            return self.cone.omega2(y).map(|r| r.0).ok_or_else(|| Error::OutOfDomain(format!("{y:?}")));
        }
        let w = self.bilinear(y, |k| self.w[k])?;
        Ok(-w.max(0.0).powf(self.cone.boundary_exponent()))
    }

    pub fn grad_at(&self, y: [f64; 2]) -> Result<[f64; 2]> {
        if !self.cone.inside(&y) {
            return Err(Error::OutOfDomain(format!("{y:?} is not in the dual domain")));
        }
        if self.closed_form {
            return self.cone.omega2(y).map(|r| r.1).ok_or_else(|| Error::OutOfDomain(format!("{y:?}")));
        }
        let q = self.cone.boundary_exponent();
        let w = self.bilinear(y, |k| self.w[k])?;
        let gx = self.bilinear(y, |k| self.grad_w[k][0])?;
        let gy = self.bilinear(y, |k| self.grad_w[k][1])?;
        let f = -q * w.powf(q - 1.0);
        Ok([f * gx, f * gy])
    }

    /// C-normal N(y) = (∇ω(y), ∇ω(y)·y − ω(y)), the point of Σ whose tangent
    /// hyperplane has direction ker(y, −1).
    pub fn c_normal(&self, y: [f64; 2]) -> Result<[f64; 3]> {
        let h = self.grid().h();
        if self.cone.boundary_distance(&y) < 2.0 * h {
            return Err(Error::OutOfDomain(format!("{y:?} is within two cells of the boundary")));
        }
        let om = self.omega_at(y)?;
        let g = self.grad_at(y)?;
        Ok([g[0], g[1], g[0] * y[0] + g[1] * y[1] - om])
    }

    /// Σ-volume ∫_b (−ω)^{−d−1} of a union of node-centered grid cells.
    pub fn sigma_volume(&self, cells: &[usize]) -> Result<f64> {
        let g = self.grid();
        let h = g.h();
        let half_diag = 0.5 * h * std::f64::consts::SQRT_2;
        let mut seen = std::collections::HashSet::new();
        let mut total = 0.0;
        for &c in cells {
            if c >= g.len() {
                return invalid(format!("cell {c} out of range"));
            }
            if !seen.insert(c) {
                continue;
            }
            if !self.omega.mask[c] || self.cone.boundary_distance(&g.point2(c)) <= half_diag {
                return Err(Error::OutOfDomain(format!("cell {c} touches the boundary")));
            }
            total += self.sigma_density[c];
        }
        Ok(total * g.cell_volume())
    }

    /// Nodes whose cells lie inside the disk |y − center| < radius.
    pub fn cells_in_disk(&self, center: [f64; 2], radius: f64) -> Vec<usize> {
        let g = self.grid();
        (0..g.len())
            .filter(|&i| {
                let p = g.point2(i);
                self.omega.mask[i] && (p[0] - center[0]).hypot(p[1] - center[1]) < radius
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_solution_is_exact_on_coarse_grid() {
        let cone = ConeModel::quadratic(2);
        let s = solve_affine_sphere(&cone, &SphereConfig::new(41)).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..s.grid().len() {
            if s.omega.mask[i] {
                let y = s.grid().point2(i);
                worst = worst.max((s.omega.values[i] + (1.0 - y[0] * y[0] - y[1] * y[1]).sqrt()).abs());
            }
        }
        assert!(worst < 1e-8, "max error {worst}");
    }

    #[test]
    fn closed_form_residual_is_roundoff() {
        for cone in [ConeModel::quadratic(2), ConeModel::simplicial(2)] {
            let s = AffineSphere::closed_form(&cone, 33).unwrap();
            assert!(s.diagnostics.final_residual < 1e-10);
        }
    }

    #[test]
    fn rejects_coarse_grid() {
        assert!(solve_affine_sphere(&ConeModel::quadratic(2), &SphereConfig::new(17)).is_err());
    }
}
