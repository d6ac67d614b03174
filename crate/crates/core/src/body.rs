//! C-convex bodies given by support functions on the sphere grid: Monge–Ampère
//! and area measures, parallel volumes, Steiner coefficients and curvature.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::convex::subgradient_cell;
use crate::error::{invalid, Error, Result};
use crate::grid::{fmt17, merge_header, Grid, GridFn};
use crate::linalg::{binomial, pairwise_sum};
use crate::sphere::AffineSphere;

/// A C-convex domain through its support function s on the grid of `sphere`.
#[derive(Clone, Debug)]
pub struct Body {
    pub support: GridFn,
    pub sphere: Arc<AffineSphere>,
    c2_plus: bool,
}

impl Body {
    pub fn new(support: GridFn, sphere: Arc<AffineSphere>) -> Result<Self> {
        if support.grid != sphere.omega.grid {
            return invalid("support and sphere live on different grids");
        }
        if support.mask != sphere.omega.mask {
            return invalid("support mask differs from the sphere mask");
        }
        let support = if support.convex { support } else { support.mark_convex()? };
        let mut body = Body { support, sphere, c2_plus: false };
        body.c2_plus = body.certified_nodes().into_iter().all(|i| {
            let [a, b, c] = body.support.hessian2(i).unwrap();
            a > 0.0 && a * b - c * c > 0.0
        });
        Ok(body)
    }

    /// Body with support s(y) = f(y, ω(y)) at masked nodes.
    pub fn from_fn(sphere: Arc<AffineSphere>, f: impl Fn([f64; 2], f64) -> f64) -> Result<Self> {
        let om = &sphere.omega;
        let values = (0..om.grid.len()).map(|i| if om.mask[i] { f(om.grid.point2(i), om.values[i]) } else { 0.0 }).collect();
        let support = GridFn::new(om.grid.clone(), values, om.mask.clone())?;
        Body::new(support, sphere)
    }

    /// The body v + C + tΣ, support v·(y, −1) + tω.
    pub fn sigma_offset(sphere: Arc<AffineSphere>, v: [f64; 3], t: f64) -> Result<Self> {
        Body::from_fn(sphere, |y, om| v[0] * y[0] + v[1] * y[1] - v[2] + t * om)
    }

    pub fn is_c2_plus(&self) -> bool {
        self.c2_plus
    }

    pub fn grid(&self) -> &Grid {
        &self.support.grid
    }

    fn require_c2(&self) -> Result<()> {
        if self.c2_plus {
            Ok(())
        } else {
            Err(Error::Singular("support has no positive-definite discrete Hessian certificate".into()))
        }
    }

    /// Nodes where both s and ω have centered second differences.
    pub fn hessian_nodes(&self) -> Vec<usize> {
        (0..self.grid().len()).filter(|&i| self.support.is_interior(i)).collect()
    }

    /// Hessian nodes at least two cells from ∂Ω* where the discrete Hessian
    /// of ω is positive definite; the C²₊ certificate and curvature
    /// quantities are evaluated there.
    pub fn certified_nodes(&self) -> Vec<usize> {
        let h = self.grid().h();
        let cone = &self.sphere.cone;
        (0..self.grid().len())
            .filter(|&i| {
                self.support.is_interior(i)
                    && cone.boundary_distance(&self.grid().point2(i)) >= 2.0 * h
                    && self.sphere.omega.hessian2(i).is_some_and(|[a, b, c]| a > 0.0 && a * b - c * c > 0.0)
            })
            .collect()
    }

    /// Hessian nodes at least `cells` grid cells from ∂Ω*.
    pub fn collar_nodes(&self, cells: f64) -> Vec<usize> {
        let h = self.grid().h();
        let cone = &self.sphere.cone;
        self.hessian_nodes().into_iter().filter(|&i| cone.boundary_distance(&self.grid().point2(i)) >= cells * h).collect()
    }

    /// Discrete Hessians (A, B) = (Hess_h s, Hess_h ω) at an interior node.
    pub fn hessians(&self, node: usize) -> Option<([f64; 3], [f64; 3])> {
        Some((self.support.hessian2(node)?, self.sphere.omega.hessian2(node)?))
    }
}

fn det(a: [f64; 3]) -> f64 {
    a[0] * a[1] - a[2] * a[2]
}

/// det(A + tB) = det A + t·mixed + t²·det B.
fn mixed(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[1] + a[1] * b[0] - 2.0 * a[2] * b[2]
}

#[derive(Clone, Debug, Serialize)]
pub struct Atom {
    pub node: usize,
    pub location: Vec<f64>,
    pub mass: f64,
}

/// Radon measure on grid cells: one mass per node plus flagged atoms.
/// Atom masses are included in `mass`.
#[derive(Clone, Debug)]
pub struct DiscreteMeasure {
    pub grid: Grid,
    pub mass: Vec<f64>,
    pub valid: Vec<bool>,
    pub atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn zero(grid: Grid, valid: Vec<bool>) -> Self {
        let n = grid.len();
        DiscreteMeasure { grid, mass: vec![0.0; n], valid, atoms: Vec::new() }
    }

    pub fn from_density(grid: Grid, density: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if density.len() != grid.len() || valid.len() != grid.len() {
            return invalid("density length does not match the grid");
        }
        if density.iter().zip(&valid).any(|(d, &v)| v && (*d < 0.0 || !d.is_finite())) {
            return invalid("densities must be finite and nonnegative");
        }
        let cv = grid.cell_volume();
        let mass = density.iter().zip(&valid).map(|(d, &v)| if v { d * cv } else { 0.0 }).collect();
        Ok(DiscreteMeasure { grid, mass, valid, atoms: Vec::new() })
    }

    pub fn density(&self, node: usize) -> f64 {
        self.mass[node] / self.grid.cell_volume()
    }

    pub fn total(&self) -> f64 {
        let v: Vec<f64> = self.mass.iter().zip(&self.valid).filter(|p| *p.1).map(|p| *p.0).collect();
        pairwise_sum(&v)
    }

    /// Mass of a set of cells; errors if any cell is outside the support.
    pub fn mass_of(&self, cells: &[usize]) -> Result<f64> {
        let mut v = Vec::with_capacity(cells.len());
        for &c in cells {
            if c >= self.mass.len() || !self.valid[c] {
                return Err(Error::OutOfDomain(format!("cell {c} is not covered by the measure")));
            }
            v.push(self.mass[c]);
        }
        Ok(pairwise_sum(&v))
    }

    pub fn is_atom(&self, node: usize) -> bool {
        self.atoms.iter().any(|a| a.node == node)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.mass.iter_mut().for_each(|x| *x *= factor);
        m.atoms.iter_mut().for_each(|a| a.mass *= factor);
        m
    }

    /// CSV: JSON header line, then `cell,density,atom,mass` for valid cells.
    pub fn write_csv<W: Write>(&self, mut w: W, meta: &serde_json::Value) -> Result<()> {
        let header = merge_header(meta, serde_json::json!({
            "format": "conevex-measure",
            "lo": self.grid.lo,
            "hi": self.grid.hi,
            "shape": self.grid.shape,
        }));
        writeln!(w, "{header}")?;
        writeln!(w, "cell,density,atom,mass")?;
        for i in 0..self.grid.len() {
            if self.valid[i] {
                writeln!(w, "{},{},{},{}", i, fmt17(self.density(i)), u8::from(self.is_atom(i)), fmt17(self.mass[i]))?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<(Self, serde_json::Value)> {
        let mut lines = r.lines();
        let header: serde_json::Value = serde_json::from_str(&lines.next().ok_or_else(|| Error::Invalid("empty measure file".into()))??)?;
        let get = |k: &str| -> Result<Vec<f64>> {
            serde_json::from_value(header[k].clone()).map_err(|e| Error::Invalid(format!("bad header field {k}: {e}")))
        };
        let shape: Vec<usize> = serde_json::from_value(header["shape"].clone()).map_err(|e| Error::Invalid(format!("bad shape: {e}")))?;
        let grid = Grid::new(get("lo")?, get("hi")?, shape)?;
        let mut m = DiscreteMeasure::zero(grid.clone(), vec![false; grid.len()]);
        lines.next();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return invalid(format!("bad measure line: {line}"));
            }
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Invalid(format!("{s}: {e}")));
            let i: usize = f[0].trim().parse().map_err(|e| Error::Invalid(format!("{}: {e}", f[0])))?;
            if i >= grid.len() {
                return invalid(format!("cell {i} out of range"));
            }
            let mass = parse(f[3])?;
            if mass < 0.0 {
                return invalid("negative mass");
            }
            m.valid[i] = true;
            m.mass[i] = mass;
            if f[2].trim() == "1" {
                m.atoms.push(Atom { node: i, location: grid.coords(i), mass });
            }
        }
        Ok((m, header))
    }
}

/// Atom rule: a cell is an atom when its slope polytope is wider than three
/// cells and carries more than four times the mass of every neighbour.
fn flag_atoms(grid: &Grid, mass: &[f64], diam: &[f64], valid: &[bool]) -> Vec<Atom> {
    let h = grid.h();
    let mut atoms = Vec::new();
    for i in 0..grid.len() {
        if !valid[i] || diam[i] <= 3.0 * h || mass[i] <= 1e-14 {
            continue;
        }
        let mut nb: f64 = 0.0;
        for di in -1..=1 {
            for dj in -1..=1 {
                if (di, dj) != (0, 0) {
                    if let Some(j) = grid.offset2(i, di, dj) {
                        nb = nb.max(mass[j]);
                    }
                }
            }
        }
        if mass[i] > 4.0 * nb {
            atoms.push(Atom { node: i, location: grid.coords(i), mass: mass[i] });
        }
    }
    atoms
}

/// Monge–Ampère measure: per-node Lebesgue volume of the subgradient cell.
pub fn ma_measure(s: &GridFn) -> Result<DiscreteMeasure> {
    if !s.convex {
        return invalid("Monge–Ampère measure needs a convex support function");
    }
    if s.grid.dim() != 2 {
        return invalid("Monge–Ampère measures are implemented for d = 2");
    }
    let n = s.grid.len();
    let cells: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !s.is_interior(i) {
                return Ok((0.0, 0.0));
            }
            let c = subgradient_cell(s, i)?;
            Ok((c.volume(), c.diameter()))
        })
        .collect::<Result<_>>()?;
    let valid: Vec<bool> = (0..n).map(|i| s.is_interior(i)).collect();
    let mass: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let diam: Vec<f64> = cells.iter().map(|c| c.1).collect();
    let atoms = flag_atoms(&s.grid, &mass, &diam, &valid);
    Ok(DiscreteMeasure { grid: s.grid.clone(), mass, valid, atoms })
}

/// Area measure (−ω)·MA(s).
pub fn area_measure(body: &Body) -> Result<DiscreteMeasure> {
    let mut m = ma_measure(&body.support)?;
    let om = &body.sphere.omega.values;
    for i in 0..m.mass.len() {
        m.mass[i] *= -om[i];
    }
    for a in &mut m.atoms {
        a.mass *= -om[a.node];
    }
    Ok(m)
}

/// Σ-volume measure (−ω)^{−d−1} restricted to the Hessian nodes of a body.
pub fn sigma_measure(body: &Body) -> DiscreteMeasure {
    let g = body.grid().clone();
    let valid: Vec<bool> = (0..g.len()).map(|i| body.support.is_interior(i)).collect();
    let cv = g.cell_volume();
    let mass = (0..g.len()).map(|i| if valid[i] { body.sphere.sigma_density[i] * cv } else { 0.0 }).collect();
    DiscreteMeasure { grid: g, mass, valid, atoms: Vec::new() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeMode {
    Smooth,
    MonteCarlo,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParallelVolume {
    pub eps: f64,
    pub value: f64,
    /// Standard error of the Monte Carlo estimate (0 in smooth mode).
    pub stderr: f64,
    pub samples: usize,
}

fn check_cells(body: &Body, cells: &[usize]) -> Result<()> {
    for &c in cells {
        if c >= body.grid().len() || !body.support.is_interior(c) {
            return Err(Error::OutOfDomain(format!("cell {c} touches the boundary")));
        }
    }
    Ok(())
}

/// Per-node parallel-volume density ∫₀^ε (−ω) det Hess(s + tω) dt·h^d.
fn smooth_parallel_mass(body: &Body, node: usize, eps: f64) -> Option<f64> {
    let (a, b) = body.hessians(node)?;
    let om = body.sphere.omega.values[node];
    let integral = eps * det(a) + eps * eps / 2.0 * mixed(a, b) + eps.powi(3) / 3.0 * det(b);
    Some(-om * integral * body.grid().cell_volume())
}

/// Volume of the parallel ε-neighbourhood of K above the cell set b.
pub fn parallel_volume(body: &Body, eps: f64, cells: &[usize], mode: VolumeMode, samples: usize, seed: u64) -> Result<ParallelVolume> {
    if eps <= 0.0 || !eps.is_finite() {
        return invalid("ε must be positive");
    }
    check_cells(body, cells)?;
    match mode {
        VolumeMode::Smooth => {
            let v: Vec<f64> = cells.iter().map(|&c| smooth_parallel_mass(body, c, eps).unwrap_or(0.0)).collect();
            Ok(ParallelVolume { eps, value: pairwise_sum(&v), stderr: 0.0, samples: 0 })
        }
        VolumeMode::MonteCarlo => parallel_volume_mc(body, eps, cells, samples, seed),
    }
}

/// Monte Carlo parallel volume. A sample X is retracted onto ∂K at time
/// t*(X) = min_j (s_j − X·(y_j, −1)) / (−ω_j); it is counted when
/// 0 < t* < ε and the minimizing node lies in b.
fn parallel_volume_mc(body: &Body, eps: f64, cells: &[usize], samples: usize, seed: u64) -> Result<ParallelVolume> {
    if samples == 0 {
        return invalid("Monte Carlo mode needs at least one sample");
    }
    let g = body.grid();
    let s = &body.support;
    let om = &body.sphere.omega;
    let in_b: std::collections::HashSet<usize> = cells.iter().copied().collect();
    // Candidate feet: b dilated by six cells.
    let mut cand: Vec<usize> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &c in cells {
        for di in -6..=6 {
            for dj in -6..=6 {
                if let Some(j) = g.offset2(c, di, dj) {
                    if s.mask[j] && seen.insert(j) {
                        cand.push(j);
                    }
                }
            }
        }
    }
    cand.sort_unstable();
    let pts: Vec<([f64; 3], f64, f64)> = cand
        .iter()
        .map(|&j| {
            let y = g.point2(j);
            ([y[0], y[1], -1.0], s.values[j], -om.values[j])
        })
        .collect();
    // Bounding box of the swept normals over b × [0, ε].
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &c in cells {
        let y = g.point2(c);
        let (gs, gw) = (s.gradient2(c).unwrap(), om.gradient2(c).unwrap());
        for k in 0..=8 {
            let t = eps * k as f64 / 8.0;
            let p = [gs[0] + t * gw[0], gs[1] + t * gw[1]];
            let x = [p[0], p[1], p[0] * y[0] + p[1] * y[1] - s.values[c] - t * om.values[c]];
            for a in 0..3 {
                lo[a] = lo[a].min(x[a]);
                hi[a] = hi[a].max(x[a]);
            }
        }
    }
    for a in 0..3 {
        let pad = 0.1 * (hi[a] - lo[a]) + 2.0 * g.h();
        lo[a] -= pad;
        hi[a] += pad;
    }
    let box_vol: f64 = (0..3).map(|a| hi[a] - lo[a]).product();
    let hits: usize = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let x: [f64; 3] = std::array::from_fn(|a| lo[a] + (hi[a] - lo[a]) * rng.gen::<f64>());
            let mut best = (f64::INFINITY, usize::MAX);
            for (idx, (yy, sj, wj)) in pts.iter().enumerate() {
                let t = (sj - (x[0] * yy[0] + x[1] * yy[1] + x[2] * yy[2])) / wj;
                if t < best.0 {
                    best = (t, idx);
                }
            }
            usize::from(best.0 > 0.0 && best.0 < eps && in_b.contains(&cand[best.1]))
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok(ParallelVolume { eps, value: box_vol * p, stderr: box_vol * (p * (1.0 - p) / samples as f64).sqrt(), samples })
}

/// Coefficients S_0..S_d as measures, from parallel volumes at the nodes ε_k.
#[derive(Clone, Debug)]
pub struct SteinerCoeffs {
    pub measures: Vec<DiscreteMeasure>,
    pub eps: Vec<f64>,
    pub condition: f64,
}

impl SteinerCoeffs {
    /// Reconstructed V_ε(b) = (1/(d+1)) Σ C(d+1, i) ε^{d+1−i} S_i(b).
    pub fn predict(&self, eps: f64, cells: &[usize]) -> Result<f64> {
        let d = self.measures.len() - 1;
        let mut v = 0.0;
        for (i, m) in self.measures.iter().enumerate() {
            v += binomial(d + 1, i) * eps.powi((d + 1 - i) as i32) * m.mass_of(cells)? / (d + 1) as f64;
        }
        Ok(v)
    }

    pub fn masses(&self, cells: &[usize]) -> Result<Vec<f64>> {
        self.measures.iter().map(|m| m.mass_of(cells)).collect()
    }
}

fn steiner_matrix(eps: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d + 1, d + 1, |k, i| binomial(d + 1, i) * eps[k].powi((d + 1 - i) as i32) / (d + 1) as f64)
}

/// Solve the Steiner Vandermonde system for one cell set:
/// V_{ε_k} = (1/(d+1)) Σ_i C(d+1, i) ε_k^{d+1−i} S_i. Returns (S, condition).
pub fn steiner_fit(eps: &[f64], volumes: &[f64]) -> Result<(Vec<f64>, f64)> {
    if eps.len() != volumes.len() || eps.len() < 2 {
        return invalid("need one volume per node and at least two nodes");
    }
    let d = eps.len() - 1;
    for (k, &e) in eps.iter().enumerate() {
        if e <= 0.0 || !e.is_finite() {
            return invalid("Steiner nodes must be positive");
        }
        if eps[..k].iter().any(|&f| (f - e).abs() < 1e-12 * e) {
            return invalid("Steiner nodes must be distinct");
        }
    }
    let a = steiner_matrix(eps, d);
    let sv = a.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !cond.is_finite() || cond > 1e8 {
        return Err(Error::Singular(format!("Steiner system condition number {cond:.3e} exceeds 1e8")));
    }
    let lu = a.lu();
    let x = lu.solve(&nalgebra::DVector::from_column_slice(volumes)).ok_or_else(|| Error::Singular("singular Steiner system".into()))?;
    Ok((x.iter().copied().collect(), cond))
}

pub const DEFAULT_STEINER_EPS: [f64; 3] = [0.2, 0.4, 0.6];

/// Steiner coefficient measures per cell, fitted from smooth-mode parallel
/// volumes of each cell at the nodes `eps`.
pub fn steiner_measures(body: &Body, eps: &[f64]) -> Result<SteinerCoeffs> {
    let d = 2;
    if eps.len() != d + 1 {
        return invalid(format!("need {} Steiner nodes", d + 1));
    }
    let g = body.grid().clone();
    let nodes = body.hessian_nodes();
    let mut measures: Vec<DiscreteMeasure> = (0..=d).map(|_| DiscreteMeasure::zero(g.clone(), (0..g.len()).map(|i| body.support.is_interior(i)).collect())).collect();
    let mut condition = 0.0;
    for &n in &nodes {
        let vols: Vec<f64> = eps.iter().map(|&e| smooth_parallel_mass(body, n, e).unwrap()).collect();
        let (coef, cond) = steiner_fit(eps, &vols)?;
        condition = cond;
        for (i, c) in coef.into_iter().enumerate() {
            measures[i].mass[n] = c;
        }
    }
    Ok(SteinerCoeffs { measures, eps: eps.to_vec(), condition })
}

/// C-curvature φ = det S_K = det Hess_h ω / det Hess_h s at certified nodes.
pub fn c_curvature(body: &Body) -> Result<GridFn> {
    body.require_c2()?;
    let g = body.grid().clone();
    let mut values = vec![0.0; g.len()];
    let mut mask = vec![false; g.len()];
    for i in body.certified_nodes() {
        let (a, b) = body.hessians(i).unwrap();
        let da = det(a);
        if da <= 0.0 {
            return Err(Error::Singular(format!("singular Hessian at node {i}")));
        }
        values[i] = det(b) / da;
        mask[i] = true;
    }
    GridFn::new(g, values, mask)
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeOperator {
    pub node: usize,
    /// Principal C-curvatures k_j, ascending.
    pub curvatures: [f64; 2],
    /// Principal radii r_j = 1/k_j, ascending.
    pub radii: [f64; 2],
}

impl ShapeOperator {
    /// Elementary symmetric means σ_0, σ_1, σ_2 of the radii.
    pub fn sigma(&self) -> [f64; 3] {
        let [r1, r2] = self.radii;
        [1.0, 0.5 * (r1 + r2), r1 * r2]
    }
}

/// Eigenvalues of (Hess_h s)^{−1} Hess_h ω per certified node.
pub fn shape_operator_radii(body: &Body) -> Result<Vec<ShapeOperator>> {
    body.require_c2()?;
    body.certified_nodes()
        .into_iter()
        .map(|i| {
            let (a, b) = body.hessians(i).unwrap();
            let (da, db, m) = (det(a), det(b), mixed(a, b));
            if da <= 0.0 || db <= 0.0 {
                return Err(Error::Singular(format!("singular Hessian at node {i}")));
            }
            // det(B − kA) = 0  ⇔  da·k² − m·k + db = 0
            let disc = (m * m - 4.0 * da * db).max(0.0).sqrt();
            let k1 = (m - disc) / (2.0 * da);
            let k2 = (m + disc) / (2.0 * da);
            Ok(ShapeOperator { node: i, curvatures: [k1, k2], radii: [1.0 / k2, 1.0 / k1] })
        })
        .collect()
}

/// Affine Gauss curvature of the level sets with constant C-curvature κ.
pub fn curvature_conversion(kappa: f64, d: usize) -> Result<f64> {
    if kappa <= 0.0 || !kappa.is_finite() {
        return invalid("κ must be positive");
    }
    if d == 0 {
        return invalid("d must be positive");
    }
    Ok(kappa.powf(2.0 * (d as f64 + 1.0) / (d as f64 + 2.0)))
}
