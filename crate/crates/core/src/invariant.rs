//! τ-equivariant support functions for the simplicial lattice instance.
//!
//! Γ acts on Ω* by translations in the logarithmic ray coordinates, so a
//! fundamental domain is a torus. A τ-convex body of a coboundary instance
//! τ(γ) = (I − γ)v has support s = v·(y, −1) + h̄·ω with h̄ = (s − s_τ)/ω
//! Γ-invariant; bodies are stored as h̄ on a periodic cell-centered grid.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::body::{area_measure, Body, DiscreteMeasure};
use crate::cone::{dual_apply, ConeKind, ConeModel, GroupAction, GroupElement};
use crate::convex::{cell_polygon, envelope_from_boundary, PLGraphHull, CELL_OFFSETS};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridFn};
use crate::linalg::{pairwise_sum, simplex_min, Csr, Polygon, BOX_EDGE};
use crate::sphere::AffineSphere;

/// Logarithmic chart θ ↦ y of Ω* for a simplicial cone with two commuting
/// ray-diagonal generators; generator k acts as θ ↦ θ + e_k.
#[derive(Clone, Debug)]
pub struct LogChart {
    pub cone: ConeModel,
    /// Columns −log λ^{(k)}.
    pub basis: [[f64; 3]; 2],
    pinv_basis: DMatrix<f64>,
    pinv_facets: DMatrix<f64>,
}

impl LogChart {
    pub fn new(cone: &ConeModel, eigenvalues: &[Vec<f64>]) -> Result<Self> {
        if cone.kind != ConeKind::Simplicial || cone.d != 2 {
            return invalid("the log chart needs a simplicial cone with d = 2");
        }
        if eigenvalues.len() != 2 || eigenvalues.iter().any(|l| l.len() != 3 || l.iter().any(|&x| x <= 0.0)) {
            return invalid("need two positive eigenvalue triples");
        }
        let basis: [[f64; 3]; 2] = std::array::from_fn(|k| std::array::from_fn(|i| -eigenvalues[k][i].ln()));
        let u = DMatrix::from_fn(3, 2, |i, k| basis[k][i]);
        let pinv_basis = u.clone().pseudo_inverse(1e-12).map_err(|e| Error::Invalid(e.into()))?;
        let sv = u.svd(false, false).singular_values;
        if sv.min() < 1e-9 * sv.max() {
            return invalid("generator logarithms are linearly dependent");
        }
        let f = DMatrix::from_fn(3, 2, |i, j| cone.facets[i][j]);
        let pinv_facets = f.pseudo_inverse(1e-12).map_err(|e| Error::Invalid(e.into()))?;
        Ok(LogChart { cone: cone.clone(), basis, pinv_basis, pinv_facets })
    }

    /// Chart of a group action whose generators are diagonal in the ray basis.
    pub fn from_action(cone: &ConeModel, action: &GroupAction) -> Result<Self> {
        if action.generators.len() != 2 {
            return invalid("the log chart needs exactly two generators");
        }
        let r = cone.ray_matrix();
        let rinv = r.clone().try_inverse().ok_or_else(|| Error::Invalid("singular ray matrix".into()))?;
        let mut eig = Vec::new();
        for (g, _) in &action.generators {
            let m = &rinv * &g.matrix * &r;
            let off = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m[(i, j)].abs()).fold(0.0, f64::max);
            if off > 1e-9 * m.abs().max() {
                return invalid("generator is not diagonal in the ray basis");
            }
            eig.push((0..3).map(|i| m[(i, i)]).collect());
        }
        Self::new(cone, &eig)
    }

    fn ell(&self, theta: [f64; 2]) -> [f64; 3] {
        let u: [f64; 3] = std::array::from_fn(|i| self.basis[0][i] * theta[0] + self.basis[1][i] * theta[1]);
        let e: [f64; 3] = std::array::from_fn(|i| u[i].exp());
        let s: f64 = (0..3).map(|i| self.cone.barycentric[i] * e[i]).sum();
        std::array::from_fn(|i| e[i] / s)
    }

    pub fn y(&self, theta: [f64; 2]) -> [f64; 2] {
        let l = self.ell(theta);
        let rhs = DVector::from_fn(3, |i, _| 1.0 - l[i]);
        let y = &self.pinv_facets * rhs;
        [y[0], y[1]]
    }

    pub fn theta(&self, y: [f64; 2]) -> Result<[f64; 2]> {
        let mut l = [0.0; 3];
        for (i, li) in l.iter_mut().enumerate() {
            *li = 1.0 - self.cone.facets[i][0] * y[0] - self.cone.facets[i][1] * y[1];
            if *li <= 0.0 {
                return Err(Error::OutOfDomain(format!("{y:?} is not in the dual domain")));
            }
        }
        let logs: [f64; 3] = std::array::from_fn(|i| l[i].ln());
        let mean = logs.iter().sum::<f64>() / 3.0;
        let u = DVector::from_fn(3, |i, _| logs[i] - mean);
        let t = &self.pinv_basis * u;
        Ok([t[0], t[1]])
    }

    /// |det dy/dθ|.
    pub fn jacobian_det(&self, theta: [f64; 2]) -> f64 {
        let l = self.ell(theta);
        let b = &self.cone.barycentric;
        // dℓ_i/du_m = ℓ_i δ_im − ℓ_i β_m ℓ_m;  dy = −P dℓ.
        let dl_du = DMatrix::from_fn(3, 3, |i, m| if i == m { l[i] } else { 0.0 } - l[i] * b[m] * l[m]);
        let u = DMatrix::from_fn(3, 2, |i, k| self.basis[k][i]);
        let j = -(&self.pinv_facets * dl_du * u);
        j.determinant().abs()
    }

    /// Σ-volume density with respect to dθ; constant by invariance.
    pub fn sigma_density(&self, theta: [f64; 2]) -> f64 {
        let y = self.y(theta);
        let om = self.cone.omega2(y).expect("chart stays in Ω*").0;
        (-om).powi(-3) * self.jacobian_det(theta)
    }
}

const CONVEXIFY_PASSES: usize = 2000;

/// Neighbour image used by the Oliker–Prussner cells on the torus.
#[derive(Clone, Copy, Debug)]
struct Neighbour {
    label: usize,
    wrapped: usize,
    y: [f64; 2],
    omega: f64,
}

/// Periodic cell-centered grid on the θ torus with its image nodes in Ω*.
#[derive(Clone, Debug)]
pub struct TorusGrid {
    pub chart: LogChart,
    pub n: usize,
    pub theta: Vec<[f64; 2]>,
    pub y: Vec<[f64; 2]>,
    pub omega: Vec<f64>,
    /// Σ-volume of each θ-cell.
    pub sigma_mass: Vec<f64>,
    neighbours: Vec<Vec<Neighbour>>,
}

impl TorusGrid {
    pub fn new(chart: LogChart, n: usize) -> Result<Self> {
        if n < 8 {
            return invalid("torus grid needs at least 8 cells per axis");
        }
        let h = 1.0 / n as f64;
        let coord = |i: isize| -0.5 + (i as f64 + 0.5) * h;
        let mut theta = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                theta.push([coord(i as isize), coord(j as isize)]);
            }
        }
        let y: Vec<[f64; 2]> = theta.iter().map(|&t| chart.y(t)).collect();
        let omega: Vec<f64> = y.iter().map(|&p| chart.cone.omega2(p).map(|r| r.0).ok_or_else(|| Error::OutOfDomain(format!("{p:?}")))).collect::<Result<_>>()?;
        let sigma_mass = theta.iter().map(|&t| chart.sigma_density(t) * h * h).collect();
        let neighbours = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = ((idx / n) as isize, (idx % n) as isize);
                CELL_OFFSETS
                    .iter()
                    .enumerate()
                    .map(|(label, &(di, dj))| {
                        let t = [coord(i + di), coord(j + dj)];
                        let p = chart.y(t);
                        let wi = (i + di).rem_euclid(n as isize) as usize;
                        let wj = (j + dj).rem_euclid(n as isize) as usize;
                        Neighbour { label, wrapped: wi * n + wj, y: p, omega: chart.cone.omega2(p).expect("chart stays in Ω*").0 }
                    })
                    .collect()
            })
            .collect();
        Ok(TorusGrid { chart, n, theta, y, omega, sigma_mass, neighbours })
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// The θ grid as a node grid (cell centres), for measures and CSV files.
    pub fn theta_grid(&self) -> Grid {
        let h = self.h();
        Grid::new(vec![-0.5 + h / 2.0; 2], vec![0.5 - h / 2.0; 2], vec![self.n, self.n]).expect("valid torus grid")
    }

    /// Σ-volume of the fundamental domain.
    pub fn sigma_volume(&self) -> f64 {
        pairwise_sum(&self.sigma_mass)
    }

    pub fn sigma_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure { grid: self.theta_grid(), mass: self.sigma_mass.clone(), valid: vec![true; self.len()], atoms: Vec::new() }
    }

    /// Oliker–Prussner cell of node j for g = ω·h̄.
    pub fn cell(&self, hbar: &[f64], j: usize) -> Polygon {
        let gj = self.omega[j] * hbar[j];
        cell_polygon(self.y[j], gj, self.neighbours[j].iter().map(|nb| (nb.label, nb.y, nb.omega * hbar[nb.wrapped])))
    }

    /// Area masses A_j = (−ω_j)·|cell_j|.
    pub fn area(&self, hbar: &[f64]) -> Vec<f64> {
        (0..self.len()).into_par_iter().map(|j| -self.omega[j] * self.cell(hbar, j).area()).collect()
    }

    /// Jacobian ∂A_j/∂h̄_k of the area masses.
    pub fn area_jacobian(&self, hbar: &[f64]) -> Csr {
        let rows = (0..self.len())
            .into_par_iter()
            .map(|j| {
                let poly = self.cell(hbar, j);
                let wj = -self.omega[j];
                let mut row: Vec<(usize, f64)> = Vec::new();
                let mut diag = 0.0;
                for (label, len) in poly.edge_lengths() {
                    if label == BOX_EDGE {
                        continue;
                    }
                    let nb = &self.neighbours[j][label];
                    let dist = ((nb.y[0] - self.y[j][0]).powi(2) + (nb.y[1] - self.y[j][1]).powi(2)).sqrt();
                    let w = len / dist;
                    row.push((nb.wrapped, wj * w * nb.omega));
                    diag -= w;
                }
                row.push((j, wj * diag * self.omega[j]));
                row
            })
            .collect();
        Csr::from_rows(rows)
    }

    /// Lower every node lying above the lower hull of its neighbours onto
    /// that hull, until none is left. Returns the number of passes.
    pub fn convexify(&self, hbar: &mut [f64]) -> usize {
        for pass in 0..CONVEXIFY_PASSES {
            let fixes: Vec<(usize, f64)> = (0..self.len())
                .into_par_iter()
                .filter_map(|j| {
                    if !self.cell(hbar, j).is_empty() {
                        return None;
                    }
                    let nb = &self.neighbours[j];
                    let a = vec![
                        nb.iter().map(|q| q.y[0]).collect::<Vec<f64>>(),
                        nb.iter().map(|q| q.y[1]).collect(),
                        vec![1.0; nb.len()],
                    ];
                    let c: Vec<f64> = nb.iter().map(|q| q.omega * hbar[q.wrapped]).collect();
                    let (v, _) = simplex_min(&a, &[self.y[j][0], self.y[j][1], 1.0], &c).ok()?;
                    let gj = self.omega[j] * hbar[j];
                    (gj > v + 1e-13 * (1.0 + v.abs())).then(|| (j, v / self.omega[j]))
                })
                .collect();
            if fixes.is_empty() {
                return pass;
            }
            for (j, v) in fixes {
                hbar[j] = v;
            }
        }
        CONVEXIFY_PASSES
    }

    /// Periodic bilinear interpolation of a node field at θ.
    pub fn interpolate(&self, field: &[f64], theta: [f64; 2]) -> f64 {
        let n = self.n as f64;
        let fx = (theta[0] + 0.5) * n - 0.5;
        let fy = (theta[1] + 0.5) * n - 0.5;
        let (i0, j0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - i0, fy - j0);
        let w = |i: f64, j: f64| {
            let a = (i as isize).rem_euclid(self.n as isize) as usize;
            let b = (j as isize).rem_euclid(self.n as isize) as usize;
            field[a * self.n + b]
        };
        (1.0 - tx) * (1.0 - ty) * w(i0, j0) + tx * (1.0 - ty) * w(i0 + 1.0, j0) + (1.0 - tx) * ty * w(i0, j0 + 1.0) + tx * ty * w(i0 + 1.0, j0 + 1.0)
    }
}

/// τ-convex domain s = v·(y, −1) + h̄ω of a coboundary instance.
#[derive(Clone, Debug)]
pub struct TauBody {
    pub torus: Arc<TorusGrid>,
    pub v: [f64; 3],
    pub hbar: Vec<f64>,
}

impl TauBody {
    pub fn new(torus: Arc<TorusGrid>, v: [f64; 3], hbar: Vec<f64>) -> Result<Self> {
        if hbar.len() != torus.len() {
            return invalid("h̄ length does not match the torus grid");
        }
        if hbar.iter().any(|x| !x.is_finite()) {
            return invalid("h̄ must be finite");
        }
        Ok(TauBody { torus, v, hbar })
    }

    /// D_τ + tΣ.
    pub fn sigma_offset(torus: Arc<TorusGrid>, v: [f64; 3], t: f64) -> Self {
        let n = torus.len();
        TauBody { torus, v, hbar: vec![t; n] }
    }

    pub fn from_fn(torus: Arc<TorusGrid>, v: [f64; 3], f: impl Fn([f64; 2]) -> f64) -> Self {
        let hbar = torus.theta.iter().map(|&t| f(t)).collect();
        TauBody { torus, v, hbar }
    }

    /// Support value at torus node j.
    pub fn support(&self, j: usize) -> f64 {
        let y = self.torus.y[j];
        self.v[0] * y[0] + self.v[1] * y[1] - self.v[2] + self.hbar[j] * self.torus.omega[j]
    }

    pub fn area(&self) -> Vec<f64> {
        self.torus.area(&self.hbar)
    }

    /// Area measure of K/Γ_τ on the fundamental cells.
    pub fn area_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure { grid: self.torus.theta_grid(), mass: self.area(), valid: vec![true; self.torus.len()], atoms: Vec::new() }
    }

    /// Convex combination (1−t)K0 + tK1, supports combined linearly.
    pub fn combine(&self, other: &TauBody, t: f64) -> Result<TauBody> {
        if !Arc::ptr_eq(&self.torus, &other.torus) && self.torus.n != other.torus.n {
            return invalid("bodies live on different grids");
        }
        let v = std::array::from_fn(|i| (1.0 - t) * self.v[i] + t * other.v[i]);
        let hbar = self.hbar.iter().zip(&other.hbar).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        Ok(TauBody { torus: self.torus.clone(), v, hbar })
    }

    /// Support values on the θ grid.
    pub fn support_gridfn(&self) -> GridFn {
        let values = (0..self.torus.len()).map(|j| self.support(j)).collect();
        GridFn::new(self.torus.theta_grid(), values, vec![true; self.torus.len()]).expect("torus-sized field")
    }

    /// Inverse of [`TauBody::support_gridfn`]: h̄ = (s − v·(y, −1))/ω.
    pub fn from_support_gridfn(torus: Arc<TorusGrid>, v: [f64; 3], s: &GridFn) -> Result<Self> {
        if s.grid.shape != vec![torus.n, torus.n] {
            return invalid(format!("support grid {:?} does not match a {}² torus", s.grid.shape, torus.n));
        }
        if s.mask.iter().any(|m| !m) {
            return invalid("torus supports must be defined at every cell");
        }
        let hbar = (0..torus.len())
            .map(|j| {
                let y = torus.y[j];
                (s.values[j] - (v[0] * y[0] + v[1] * y[1] - v[2])) / torus.omega[j]
            })
            .collect();
        TauBody::new(torus, v, hbar)
    }

    /// Restore discrete convexity of the support.
    pub fn convexify(&mut self) -> usize {
        let t = self.torus.clone();
        t.convexify(&mut self.hbar)
    }

    /// Sample the support on a Cartesian grid over Ω* through the chart.
    pub fn cartesian_support(&self, sphere: &AffineSphere) -> Result<GridFn> {
        let g = sphere.grid().clone();
        let mut values = vec![0.0; g.len()];
        for (i, v) in values.iter_mut().enumerate() {
            if sphere.omega.mask[i] {
                let y = g.point2(i);
                let th = self.torus.chart.theta(y)?;
                let hb = self.torus.interpolate(&self.hbar, th);
                *v = self.v[0] * y[0] + self.v[1] * y[1] - self.v[2] + hb * sphere.omega.values[i];
            }
        }
        GridFn::new(g, values, sphere.omega.mask.clone())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivarianceReport {
    pub max_defect: f64,
    pub max_interpolation_bound: f64,
    /// max over samples of defect − interpolation bound.
    pub max_excess: f64,
    pub samples: usize,
    pub escaped: usize,
}

/// Defect of s(y) = ω(y)/ω(γ^{−1}*y)·s(γ^{−1}*y) + τ(γ)·(y, −1) over random
/// cached γ and random points y in the cells `fundamental`.
pub fn equivariance_residual(s: &GridFn, sphere: &AffineSphere, action: &GroupAction, fundamental: &[usize], samples: usize, seed: u64) -> Result<EquivarianceReport> {
    if fundamental.is_empty() || samples == 0 {
        return invalid("need sample cells and a positive sample count");
    }
    let g = &s.grid;
    let h = g.h();
    let cone = &sphere.cone;
    let results: Vec<Option<(f64, f64)>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let elem = &action.cached[rng.gen_range(0..action.cached.len())];
            let c = g.point2(fundamental[rng.gen_range(0..fundamental.len())]);
            let y = [c[0] + h * (rng.gen::<f64>() - 0.5), c[1] + h * (rng.gen::<f64>() - 0.5)];
            let yp = dual_apply(&elem.linear.matrix.transpose(), &y)?;
            let yp = [yp[0], yp[1]];
            if cone.boundary_distance(&yp) < 2.0 * h || cone.boundary_distance(&y) < 2.0 * h {
                return None;
            }
            let sy = s.interpolate2(y).ok()?;
            let syp = s.interpolate2(yp).ok()?;
            let (oy, oyp) = (sphere.omega_at(y).ok()?, sphere.omega_at(yp).ok()?);
            let t = &elem.translation;
            let rho = oy / oyp;
            let rhs = rho * syp + t[0] * y[0] + t[1] * y[1] - t[2];
            let mut bound = s.interpolation_bound2(y) + rho.abs() * s.interpolation_bound2(yp);
            if !sphere.is_closed_form() {
                let om = &sphere.omega;
                bound += (rho * syp).abs() * (om.interpolation_bound2(y) / oy.abs() + om.interpolation_bound2(yp) / oyp.abs());
            }
            bound.is_finite().then(|| ((sy - rhs).abs(), bound))
        })
        .collect();
    let ok: Vec<(f64, f64)> = results.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(Error::OutOfDomain("every sample escaped the grid".into()));
    }
    Ok(EquivarianceReport {
        max_defect: ok.iter().map(|p| p.0).fold(0.0, f64::max),
        max_interpolation_bound: ok.iter().map(|p| p.1).fold(0.0, f64::max),
        max_excess: ok.iter().map(|p| p.0 - p.1).fold(f64::NEG_INFINITY, f64::max),
        samples: ok.len(),
        escaped: samples - ok.len(),
    })
}

/// Forced boundary value τ(γ)·Y/(1 − μ) of the total support function on
/// an eigencovector Y with γ^{−1}⋆Y = μY.
pub fn g_tau_at_eigendirection(elem: &GroupElement, y_cov: &DVector<f64>, mu: f64) -> Result<f64> {
    if y_cov.len() != elem.linear.dim() {
        return invalid("covector dimension mismatch");
    }
    let img = elem.linear.matrix.transpose() * y_cov;
    let err = (&img - y_cov * mu).norm();
    if err > 1e-9 * y_cov.norm().max(1.0) {
        return invalid(format!("Y is not an eigencovector with eigenvalue {mu} (defect {err:.3e})"));
    }
    if (mu - 1.0).abs() < 1e-12 {
        return Err(Error::Singular("eigenvalue 1 leaves the boundary value undetermined".into()));
    }
    Ok(elem.translation.dot(y_cov) / (1.0 - mu))
}

#[derive(Clone, Debug)]
pub enum DomainSource {
    Coboundary([f64; 3]),
    Envelope(PLGraphHull),
}

/// The maximal τ-convex domain D_τ through s_τ sampled on the sphere grid.
#[derive(Clone, Debug)]
pub struct MaximalDomain {
    pub source: DomainSource,
    pub s_tau: GridFn,
    pub boundary_data: Vec<(Vec<f64>, f64)>,
}

impl MaximalDomain {
    pub fn coboundary_vector(&self) -> Option<[f64; 3]> {
        match self.source {
            DomainSource::Coboundary(v) => Some(v),
            DomainSource::Envelope(_) => None,
        }
    }

    pub fn eval(&self, y: [f64; 2]) -> Result<f64> {
        match &self.source {
            DomainSource::Coboundary(v) => Ok(v[0] * y[0] + v[1] * y[1] - v[2]),
            DomainSource::Envelope(h) => h.eval(&y),
        }
    }

    /// P ∈ D_τ, up to `tol`.
    pub fn contains(&self, p: &[f64; 3], tol: f64) -> bool {
        match &self.source {
            DomainSource::Coboundary(v) => {
                let z: Vec<f64> = (0..3).map(|i| p[i] - v[i]).collect();
                let scale = z.iter().map(|x| x.abs()).fold(1.0, f64::max);
                cone_margin_ok(&self.s_tau, &z, tol * scale)
            }
            DomainSource::Envelope(_) => (0..self.s_tau.grid.len())
                .filter(|&i| self.s_tau.mask[i])
                .all(|i| {
                    let y = self.s_tau.grid.point2(i);
                    p[0] * y[0] + p[1] * y[1] - p[2] <= self.s_tau.values[i] + tol
                }),
        }
    }
}

fn cone_margin_ok(s_tau: &GridFn, z: &[f64], tol: f64) -> bool {
    (0..s_tau.grid.len()).filter(|&i| s_tau.mask[i]).all(|i| {
        let y = s_tau.grid.point2(i);
        z[0] * y[0] + z[1] * y[1] - z[2] <= tol
    })
}

/// D_τ from a coboundary cocycle (closed form s_τ = v·(y, −1)) or, failing
/// that, the convex envelope of supplied boundary samples of g_τ.
pub fn maximal_domain(action: &GroupAction, sphere: &AffineSphere, boundary: Option<&[(Vec<f64>, f64)]>) -> Result<MaximalDomain> {
    let g = sphere.grid().clone();
    let mask = sphere.omega.mask.clone();
    if let Some(v) = action.coboundary_vector() {
        let v = [v[0], v[1], v[2]];
        let s = GridFn::from_fn(g, |_| true, |y| v[0] * y[0] + v[1] * y[1] - v[2]);
        let s = GridFn { mask, ..s }.mark_convex()?;
        let boundary_data = sphere
            .cone
            .omega_star_vertices()
            .iter()
            .map(|y| (y.iter().copied().collect::<Vec<f64>>(), v[0] * y[0] + v[1] * y[1] - v[2]))
            .collect();
        return Ok(MaximalDomain { source: DomainSource::Coboundary(v), s_tau: s, boundary_data });
    }
    let Some(samples) = boundary else {
        return Err(Error::Invalid("cocycle is not a coboundary and no boundary data for g_τ was supplied".into()));
    };
    let hull = envelope_from_boundary(samples)?;
    let mut values = vec![0.0; g.len()];
    for i in 0..g.len() {
        if mask[i] {
            values[i] = hull.eval(&g.coords(i))?;
        }
    }
    let s = GridFn::new(g, values, mask)?.mark_convex()?;
    Ok(MaximalDomain { source: DomainSource::Envelope(hull), s_tau: s, boundary_data: samples.to_vec() })
}

/// d_H(K, K') = ‖(s − s')/ω‖_∞ over the fundamental cells.
pub fn hausdorff_distance(a: &TauBody, b: &TauBody) -> Result<f64> {
    if a.torus.n != b.torus.n || a.v != b.v {
        return invalid("bodies must share the grid and the cocycle");
    }
    Ok(a.hbar.iter().zip(&b.hbar).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// (T_min, T_max) of (s − s_τ)/ω over the fundamental cells.
pub fn cosmological_extremes(b: &TauBody, dmax: &MaximalDomain) -> Result<(f64, f64)> {
    match dmax.coboundary_vector() {
        Some(v) if v == b.v => {}
        _ => return invalid("body and maximal domain use different cocycles"),
    }
    let lo = b.hbar.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = b.hbar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo < -1e-12 {
        return Err(Error::OutOfDomain(format!("body is not contained in D_τ (min ratio {lo:.3e})")));
    }
    Ok((lo.max(0.0), hi))
}

/// Restriction of a measure to the fundamental cells.
pub fn quotient_measure(m: &DiscreteMeasure, fundamental: &[usize]) -> Result<DiscreteMeasure> {
    let mut out = DiscreteMeasure::zero(m.grid.clone(), vec![false; m.grid.len()]);
    for &c in fundamental {
        if c >= m.grid.len() || !m.valid[c] {
            return Err(Error::OutOfDomain(format!("fundamental cell {c} is not covered by the measure")));
        }
        out.valid[c] = true;
        out.mass[c] = m.mass[c];
    }
    let set: HashSet<usize> = fundamental.iter().copied().collect();
    out.atoms = m.atoms.iter().filter(|a| set.contains(&a.node)).cloned().collect();
    Ok(out)
}

/// Cartesian sphere-grid nodes whose θ lies in [−½, ½)², at least two cells
/// from ∂Ω*.
pub fn fundamental_cells(sphere: &AffineSphere, chart: &LogChart) -> Vec<usize> {
    let g = sphere.grid();
    let h = g.h();
    (0..g.len())
        .filter(|&i| {
            let y = g.point2(i);
            sphere.omega.mask[i]
                && sphere.cone.boundary_distance(&y) >= 2.0 * h
                && chart.theta(y).map_or(false, |t| t.iter().all(|&x| (-0.5..0.5).contains(&x)))
        })
        .collect()
}

/// Area masses of a Cartesian body on b and on γ*b (nodes whose preimage
/// under γ has its nearest node in b).
pub fn area_invariance(body: &Body, elem: &GroupElement, cells: &[usize]) -> Result<(f64, f64)> {
    let area = area_measure(body)?;
    let g = body.grid();
    let set: HashSet<usize> = cells.iter().copied().collect();
    let gt = elem.linear.matrix.transpose();
    let image: Vec<usize> = (0..g.len())
        .filter(|&i| {
            area.valid[i]
                && dual_apply(&gt, &g.point2(i)).map_or(false, |p| {
                    let yp = [p[0], p[1]];
                    body.sphere.cone.inside(&yp) && set.contains(&g.nearest(&yp))
                })
        })
        .collect();
    Ok((area.mass_of(cells)?, area.mass_of(&image)?))
}

/// P·Y ≥ (γP + τ(γ))·Y for every cached element, with Y = (y0, −1).
pub fn dirichlet_lee_membership(p: &[f64; 3], y0: [f64; 2], action: &GroupAction, dmax: &MaximalDomain) -> Result<bool> {
    if !dmax.contains(p, 1e-12) {
        return Err(Error::OutOfDomain(format!("{p:?} is not in D_τ")));
    }
    Ok(dl_member(p, y0, action))
}

fn dl_member(p: &[f64; 3], y0: [f64; 2], action: &GroupAction) -> bool {
    let yv = [y0[0], y0[1], -1.0];
    let pv = DVector::from_column_slice(p);
    let base: f64 = (0..3).map(|i| p[i] * yv[i]).sum();
    action.cached.iter().all(|e| {
        let q = e.linear.apply(&pv) + &e.translation;
        let val: f64 = (0..3).map(|i| q[i] * yv[i]).sum();
        base >= val - 1e-12 * (1.0 + base.abs())
    })
}

/// Inverse of a cached element as an affine map.
fn affine_inverse(e: &GroupElement) -> (DMatrix<f64>, DVector<f64>) {
    let inv = e.linear.inverse().matrix;
    let t = -(&inv * &e.translation);
    (inv, t)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoveringReport {
    pub samples: usize,
    pub covered: usize,
    pub fraction: f64,
    /// Sample points with no cached translate of DL containing them.
    pub failures: Vec<[f64; 3]>,
}

/// Fraction of sampled points of D_τ lying in some cached translate γ_τ·DL.
/// Points are P = v + t(x, 1) with t ∈ [½, 2] and x uniform in the simplex Ω
/// shrunk by `window` about its centre.
pub fn dl_covering(action: &GroupAction, dmax: &MaximalDomain, cone: &ConeModel, y0: [f64; 2], samples: usize, window: f64, seed: u64) -> Result<CoveringReport> {
    let Some(v) = dmax.coboundary_vector() else {
        return invalid("covering test needs a coboundary instance");
    };
    if cone.kind != ConeKind::Simplicial {
        return invalid("covering test samples the simplicial base Ω");
    }
    let inverses: Vec<(DMatrix<f64>, DVector<f64>)> = action.cached.iter().map(affine_inverse).collect();
    let d = cone.d;
    let results: Vec<([f64; 3], bool)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            // Uniform point of the simplex by sorted uniforms.
            let mut u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            u.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut bary = Vec::with_capacity(d + 1);
            let mut prev = 0.0;
            for &x in &u {
                bary.push(x - prev);
                prev = x;
            }
            bary.push(1.0 - prev);
            let t = 0.5 + 1.5 * rng.gen::<f64>();
            let mut z = DVector::zeros(d + 1);
            for (i, b) in bary.iter().enumerate() {
                let w = window * b + (1.0 - window) * cone.barycentric[i];
                z += &cone.rays[i] * w;
            }
            let p = [v[0] + t * z[0], v[1] + t * z[1], v[2] + t * z[2]];
            let pv = DVector::from_column_slice(&p);
            let hit = inverses.iter().any(|(m, tr)| {
                let q = m * &pv + tr;
                dl_member(&[q[0], q[1], q[2]], y0, action)
            });
            (p, hit)
        })
        .collect();
    let covered = results.iter().filter(|r| r.1).count();
    Ok(CoveringReport {
        samples,
        covered,
        fraction: covered as f64 / samples.max(1) as f64,
        failures: results.iter().filter(|r| !r.1).map(|r| r.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{default_lattice_eigenvalues, simplicial_lattice_instance};

    fn setup(n: usize) -> (ConeModel, GroupAction, Arc<TorusGrid>) {
        let (cone, action) = simplicial_lattice_instance(&default_lattice_eigenvalues(), &[1.0, 0.0, 0.0], 2).unwrap();
        let chart = LogChart::from_action(&cone, &action).unwrap();
        let torus = Arc::new(TorusGrid::new(chart, n).unwrap());
        (cone, action, torus)
    }

    #[test]
    fn chart_roundtrip() {
        let (_, _, t) = setup(16);
        for th in [[0.1, -0.3], [0.45, 0.2], [-0.49, -0.49]] {
            let back = t.chart.theta(t.chart.y(th)).unwrap();
            assert!((back[0] - th[0]).abs() < 1e-12 && (back[1] - th[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn generators_translate_theta() {
        let (_, action, t) = setup(16);
        let th = [0.1, 0.2];
        let y = t.chart.y(th);
        for (k, (g, _)) in action.generators.iter().enumerate() {
            let img = dual_apply(&g.inverse_transpose(), &y).unwrap();
            let th2 = t.chart.theta([img[0], img[1]]).unwrap();
            let mut expect = th;
            expect[k] += 1.0;
            assert!((th2[0] - expect[0]).abs() < 1e-10 && (th2[1] - expect[1]).abs() < 1e-10, "{th2:?}");
        }
    }

    #[test]
    fn sigma_density_is_constant() {
        let (_, _, t) = setup(16);
        let m = &t.sigma_mass;
        let (lo, hi) = m.iter().fold((f64::INFINITY, 0.0f64), |a, &x| (a.0.min(x), a.1.max(x)));
        assert!((hi - lo) / hi < 1e-10);
    }

    #[test]
    fn g_tau_values() {
        let (cone, action, _) = setup(16);
        let e = &action.cached[1];
        // Vertices of Ω* are the eigencovectors of γᵀ.
        let m = e.linear.matrix.transpose();
        for a in cone.omega_star_vertices() {
            let y = DVector::from_vec(vec![a[0], a[1], -1.0]);
            let img = &m * &y;
            let mu = img[2] / y[2];
            match g_tau_at_eigendirection(e, &y, mu) {
                Ok(val) => assert!((val - a[0]).abs() < 1e-12),
                Err(Error::Singular(_)) => assert!((mu - 1.0).abs() < 1e-12),
                Err(err) => panic!("{err}"),
            }
        }
    }

    #[test]
    fn hausdorff_of_offset_is_t() {
        let (_, _, t) = setup(16);
        let a = TauBody::sigma_offset(t.clone(), [1.0, 0.0, 0.0], 0.2);
        let b = TauBody::sigma_offset(t, [1.0, 0.0, 0.0], 0.7);
        assert!((hausdorff_distance(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn convexify_lowers_a_spike() {
        let (_, _, t) = setup(16);
        let mut h = vec![0.5; t.len()];
        h[40] = 0.1;
        assert!(t.cell(&h, 40).is_empty());
        assert!(t.convexify(&mut h) < CONVEXIFY_PASSES);
        assert!(h[40] > 0.45);
        assert_eq!(t.convexify(&mut h), 0);
    }
}
