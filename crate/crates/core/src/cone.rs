//! Cones in the parametrisation C = {t(x, 1) : x ∈ Ω}, their dual domains
//! Ω* = {y : x·y < 1 on Ω̄}, projective dual actions, and groups of affine
//! maps with translation cocycles.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeKind {
    Quadratic,
    Simplicial,
}

/// A proper open convex cone of R^{d+1}, either the round (Lorentz) cone or
/// a simplicial cone spanned by d+1 rays (a_i, 1).
#[derive(Clone, Debug)]
pub struct ConeModel {
    pub kind: ConeKind,
    pub d: usize,
    /// Rays (a_i, 1); empty for the quadratic cone.
    pub rays: Vec<DVector<f64>>,
    /// Facet normals of Ω*: Ω* = {y : a_i·y < 1}.
    pub facets: Vec<DVector<f64>>,
    ray_inverse: DMatrix<f64>,
    /// Barycentric weights with Σ β_i a_i = 0.
    pub barycentric: Vec<f64>,
    sphere_scale: f64,
}

impl ConeModel {
    pub fn quadratic(d: usize) -> Self {
        ConeModel {
            kind: ConeKind::Quadratic,
            d,
            rays: Vec::new(),
            facets: Vec::new(),
            ray_inverse: DMatrix::identity(d + 1, d + 1),
            barycentric: Vec::new(),
            sphere_scale: 1.0,
        }
    }

    /// Simplicial cone over a regular simplex centered at 0 with circumradius
    /// √d, which normalizes the affine sphere so that ω(0) = −1.
    pub fn simplicial(d: usize) -> Self {
        let verts = regular_simplex(d, (d as f64).sqrt());
        let rays = verts
            .iter()
            .map(|a| {
                let mut r = DVector::zeros(d + 1);
                r.rows_mut(0, d).copy_from(a);
                r[d] = 1.0;
                r
            })
            .collect();
        Self::simplicial_from_rays(rays).expect("regular simplex is a valid cone")
    }

    /// Build a simplicial cone from d+1 rays in R^{d+1}. Rays are rescaled to
    /// last coordinate 1; Ω = conv(a_i) must contain 0 in its interior.
    pub fn simplicial_from_rays(rays: Vec<DVector<f64>>) -> Result<Self> {
        let n = rays.len();
        if n < 2 {
            return invalid("need at least two rays");
        }
        let d = n - 1;
        let mut normalized = Vec::with_capacity(n);
        for r in &rays {
            if r.len() != d + 1 {
                return invalid("ray dimension must be d+1");
            }
            if r[d] <= 1e-12 {
                return invalid("rays must have positive last coordinate");
            }
            normalized.push(r / r[d]);
        }
        let mut rm = DMatrix::zeros(d + 1, d + 1);
        for (i, r) in normalized.iter().enumerate() {
            rm.set_column(i, r);
        }
        let inv = rm
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Invalid("rays are linearly dependent".into()))?;
        // Barycentric coordinates of the origin of Ω: R β = (0, …, 0, 1).
        let mut e = DVector::zeros(d + 1);
        e[d] = 1.0;
        let beta = &inv * &e;
        if beta.iter().any(|&b| b <= 1e-12) {
            return invalid("origin must lie inside the convex hull of the rays");
        }
        let facets: Vec<DVector<f64>> = normalized.iter().map(|r| r.rows(0, d).into_owned()).collect();
        let mut cone = ConeModel {
            kind: ConeKind::Simplicial,
            d,
            rays: normalized,
            facets,
            ray_inverse: inv,
            barycentric: beta.iter().copied().collect(),
            sphere_scale: 1.0,
        };
        // Hess ω = u Cov(b_i) with b_i = a_i/ℓ_i; fix the constant at y = 0.
        let cov = cone.simplicial_cov(&DVector::zeros(d));
        cone.sphere_scale = cov.determinant().powf(-1.0 / (2.0 * (d + 1) as f64));
        Ok(cone)
    }

    pub fn ambient_dim(&self) -> usize {
        self.d + 1
    }

    /// Exponent q with ω = −w^q and w smooth up to ∂Ω*.
    pub fn boundary_exponent(&self) -> f64 {
        match self.kind {
            ConeKind::Quadratic => 0.5,
            ConeKind::Simplicial => 1.0 / (self.d + 1) as f64,
        }
    }

    pub fn in_omega(&self, x: &[f64]) -> bool {
        match self.kind {
            ConeKind::Quadratic => x.iter().map(|v| v * v).sum::<f64>() < 1.0,
            ConeKind::Simplicial => {
                let mut xv = DVector::from_column_slice(x).insert_row(self.d, 1.0);
                xv = &self.ray_inverse * xv;
                xv.iter().all(|&c| c > 0.0)
            }
        }
    }

    /// Membership in Ω*.
    pub fn inside(&self, y: &[f64]) -> bool {
        match self.kind {
            ConeKind::Quadratic => y.iter().map(|v| v * v).sum::<f64>() < 1.0,
            ConeKind::Simplicial => self.facets.iter().all(|a| dotv(a, y) < 1.0),
        }
    }

    /// Euclidean distance to ∂Ω* (negative outside).
    pub fn boundary_distance(&self, y: &[f64]) -> f64 {
        match self.kind {
            ConeKind::Quadratic => 1.0 - y.iter().map(|v| v * v).sum::<f64>().sqrt(),
            ConeKind::Simplicial => self
                .facets
                .iter()
                .map(|a| (1.0 - dotv(a, y)) / a.norm())
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Largest t with y + t v still in closure(Ω*) (y inside, v ≠ 0).
    pub fn exit_param(&self, y: &[f64], v: &[f64]) -> f64 {
        match self.kind {
            ConeKind::Quadratic => {
                let a: f64 = v.iter().map(|x| x * x).sum();
                let b: f64 = 2.0 * y.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
                let c: f64 = y.iter().map(|x| x * x).sum::<f64>() - 1.0;
                (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a)
            }
            ConeKind::Simplicial => self
                .facets
                .iter()
                .filter_map(|a| {
                    let av = dotv(a, v);
                    (av > 1e-15).then(|| (1.0 - dotv(a, y)) / av)
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Membership of a vector of R^{d+1} in the open cone C.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.cone_margin(x) > 0.0
    }

    /// Signed margin: positive inside C, zero on ∂C.
    pub fn cone_margin(&self, x: &[f64]) -> f64 {
        let d = self.d;
        match self.kind {
            ConeKind::Quadratic => x[d] - x[..d].iter().map(|v| v * v).sum::<f64>().sqrt(),
            ConeKind::Simplicial => {
                let c = &self.ray_inverse * DVector::from_column_slice(x);
                c.iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Coordinates of x in the ray basis (simplicial cones).
    pub fn ray_coordinates(&self, x: &[f64]) -> DVector<f64> {
        &self.ray_inverse * DVector::from_column_slice(x)
    }

    /// Matrix whose columns are the rays.
    pub fn ray_matrix(&self) -> DMatrix<f64> {
        let n = self.d + 1;
        let mut r = DMatrix::zeros(n, n);
        for (i, ray) in self.rays.iter().enumerate() {
            r.set_column(i, ray);
        }
        r
    }

    /// Vertices of Ω* (simplicial): the points where d of the facets meet.
    pub fn omega_star_vertices(&self) -> Vec<DVector<f64>> {
        if self.kind != ConeKind::Simplicial {
            return Vec::new();
        }
        let d = self.d;
        (0..=d)
            .map(|skip| {
                let rows: Vec<&DVector<f64>> = self.facets.iter().enumerate().filter(|(i, _)| *i != skip).map(|e| e.1).collect();
                let mut m = DMatrix::zeros(d, d);
                for (i, a) in rows.iter().enumerate() {
                    m.set_row(i, &a.transpose());
                }
                m.lu().solve(&DVector::from_element(d, 1.0)).expect("facets in general position")
            })
            .collect()
    }

    /// Axis-aligned bounding box of Ω*.
    pub fn omega_star_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            ConeKind::Quadratic => (vec![-1.0; self.d], vec![1.0; self.d]),
            ConeKind::Simplicial => {
                let v = self.omega_star_vertices();
                let lo = (0..self.d).map(|k| v.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min)).collect();
                let hi = (0..self.d).map(|k| v.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
                (lo, hi)
            }
        }
    }

    fn simplicial_cov(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let d = self.d;
        let n = (d + 1) as f64;
        let b: Vec<DVector<f64>> = self.facets.iter().map(|a| a / (1.0 - a.dot(y))).collect();
        let mean = b.iter().fold(DVector::zeros(d), |acc, v| acc + v) / n;
        let mut cov = DMatrix::zeros(d, d);
        for v in &b {
            let c = v - &mean;
            cov += &c * c.transpose();
        }
        cov / n
    }

    /// Closed-form affine-sphere support function ω with gradient and Hessian.
    pub fn omega_closed_form(&self, y: &[f64]) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        if !self.inside(y) {
            return None;
        }
        let d = self.d;
        let yv = DVector::from_column_slice(y);
        match self.kind {
            ConeKind::Quadratic => {
                let r2 = yv.norm_squared();
                let s = (1.0 - r2).sqrt();
                let grad = &yv / s;
                let hess = (DMatrix::identity(d, d) * (1.0 - r2) + &yv * yv.transpose()) / (s * s * s);
                Some((-s, grad, hess))
            }
            ConeKind::Simplicial => {
                let n = (d + 1) as f64;
                let logp: f64 = self.facets.iter().map(|a| (1.0 - a.dot(&yv)).ln()).sum();
                let u = self.sphere_scale * (logp / n).exp();
                let b: Vec<DVector<f64>> = self.facets.iter().map(|a| a / (1.0 - a.dot(&yv))).collect();
                let mean = b.iter().fold(DVector::zeros(d), |acc, v| acc + v) / n;
                let grad = &mean * u;
                let hess = self.simplicial_cov(&yv) * u;
                Some((-u, grad, hess))
            }
        }
    }

    /// Closed-form ω specialised to d = 2, returning value, gradient and the
    /// Hessian entries (xx, yy, xy).
    pub fn omega2(&self, y: [f64; 2]) -> Option<(f64, [f64; 2], [f64; 3])> {
        match self.kind {
            ConeKind::Quadratic => {
                let r2 = y[0] * y[0] + y[1] * y[1];
                if r2 >= 1.0 {
                    return None;
                }
                let s = (1.0 - r2).sqrt();
                let s3 = s * s * s;
                Some((
                    -s,
                    [y[0] / s, y[1] / s],
                    [(1.0 - r2 + y[0] * y[0]) / s3, (1.0 - r2 + y[1] * y[1]) / s3, y[0] * y[1] / s3],
                ))
            }
            ConeKind::Simplicial => {
                let mut logp = 0.0;
                let mut b = [[0.0; 2]; 3];
                for (i, a) in self.facets.iter().enumerate() {
                    let l = 1.0 - a[0] * y[0] - a[1] * y[1];
                    if l <= 0.0 {
                        return None;
                    }
                    logp += l.ln();
                    b[i] = [a[0] / l, a[1] / l];
                }
                let u = self.sphere_scale * (logp / 3.0).exp();
                let m = [(b[0][0] + b[1][0] + b[2][0]) / 3.0, (b[0][1] + b[1][1] + b[2][1]) / 3.0];
                let mut c = [0.0; 3];
                for v in &b {
                    let (p, q) = (v[0] - m[0], v[1] - m[1]);
                    c[0] += p * p;
                    c[1] += q * q;
                    c[2] += p * q;
                }
                Some((-u, [u * m[0], u * m[1]], [u * c[0] / 3.0, u * c[1] / 3.0, u * c[2] / 3.0]))
            }
        }
    }

    /// Deterministic sample of rays on ∂C (unit last coordinate).
    pub fn sample_boundary_rays(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let d = self.d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| match self.kind {
                ConeKind::Quadratic => {
                    let mut v = DVector::from_fn(d, |_, _| rng.gen::<f64>() - 0.5);
                    if v.norm() < 1e-9 {
                        v[0] = 1.0;
                    }
                    v.normalize_mut();
                    v.insert_row(d, 1.0)
                }
                ConeKind::Simplicial => {
                    let skip = rng.gen_range(0..=d);
                    let mut c: Vec<f64> = (0..=d).map(|i| if i == skip { 0.0 } else { rng.gen::<f64>() + 1e-3 }).collect();
                    let s: f64 = c.iter().sum();
                    c.iter_mut().for_each(|v| *v /= s);
                    self.rays.iter().zip(&c).fold(DVector::zeros(d + 1), |acc, (r, w)| acc + r * *w)
                }
            })
            .collect()
    }

    /// Projective dual action y ↦ R(g^{−T}(y, −1)).
    pub fn dual_action(&self, g: &LinearMap, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.d {
            return invalid("point dimension mismatch");
        }
        if !self.inside(y) {
            return Err(Error::OutOfDomain(format!("{y:?} is not in the dual domain")));
        }
        let out = dual_apply(&g.inverse_transpose(), y);
        match out {
            Some(p) if self.inside(p.as_slice()) => Ok(p),
            _ => Err(Error::Invalid("map does not preserve the dual domain".into())),
        }
    }
}

/// Apply a precomputed g^{−T} to (y, −1) and rescale to the chart.
pub fn dual_apply(ginv_t: &DMatrix<f64>, y: &[f64]) -> Option<DVector<f64>> {
    let d = y.len();
    let yy = DVector::from_column_slice(y).insert_row(d, -1.0);
    let z = ginv_t * yy;
    let t = -z[d];
    (t > 0.0).then(|| z.rows(0, d) / t)
}

/// `dual_projective_action(g, y)` for the given cone.
pub fn dual_projective_action(cone: &ConeModel, g: &LinearMap, y: &[f64]) -> Result<DVector<f64>> {
    cone.dual_action(g, y)
}

fn dotv(a: &DVector<f64>, y: &[f64]) -> f64 {
    a.iter().zip(y).map(|(p, q)| p * q).sum()
}

/// Vertices of a regular d-simplex centered at 0 with the given circumradius.
pub fn regular_simplex(d: usize, radius: f64) -> Vec<DVector<f64>> {
    // Standard basis of R^{d+1}, centered and expressed in an orthonormal
    // basis of the hyperplane Σ x = 0.
    let n = d + 1;
    let mut centered = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            centered[(i, j)] = if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64;
        }
    }
    let svd = centered.clone().svd(true, false);
    let u = svd.u.expect("svd");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let basis: Vec<DVector<f64>> = idx[..d].iter().map(|&k| u.column(k).into_owned()).collect();
    let mut verts: Vec<DVector<f64>> = (0..n)
        .map(|i| DVector::from_iterator(d, basis.iter().map(|b| b.dot(&centered.column(i)))))
        .collect();
    if d == 2 {
        // Fixed orientation: first vertex on the positive second axis.
        verts = (0..3)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0 + std::f64::consts::FRAC_PI_2;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
    } else if d == 1 {
        verts = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])];
    }
    verts
        .into_iter()
        .map(|v| {
            let nv = v.norm();
            v * (radius / nv)
        })
        .collect()
}

/// A linear map of R^{d+1}.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return invalid("linear map must be square");
        }
        Ok(LinearMap { matrix })
    }

    /// Element of SL(d+1): determinant 1 within 1e−10.
    pub fn special(matrix: DMatrix<f64>) -> Result<Self> {
        let m = Self::new(matrix)?;
        let det = m.matrix.determinant();
        if (det - 1.0).abs() > 1e-10 {
            return invalid(format!("determinant {det} is not 1"));
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        LinearMap { matrix: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn inverse(&self) -> LinearMap {
        LinearMap { matrix: self.matrix.clone().try_inverse().expect("invertible map") }
    }

    pub fn inverse_transpose(&self) -> DMatrix<f64> {
        self.inverse().matrix.transpose()
    }

    pub fn compose(&self, other: &LinearMap) -> LinearMap {
        LinearMap { matrix: &self.matrix * &other.matrix }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
}

/// One cached group element with its cocycle value and a word producing it.
#[derive(Clone, Debug)]
pub struct GroupElement {
    pub linear: LinearMap,
    pub translation: DVector<f64>,
    pub word: Vec<(usize, i8)>,
}

/// Generators of Γ_τ: linear parts in SL(d+1) preserving C, with translation
/// parts τ(γ_k). Elements up to `word_bound` are cached by breadth-first
/// enumeration.
#[derive(Clone, Debug)]
pub struct GroupAction {
    pub generators: Vec<(LinearMap, DVector<f64>)>,
    pub word_bound: usize,
    pub cached: Vec<GroupElement>,
}

impl GroupAction {
    pub fn new(cone: &ConeModel, generators: Vec<(LinearMap, DVector<f64>)>, word_bound: usize) -> Result<Self> {
        let n = cone.ambient_dim();
        let rays = cone.sample_boundary_rays(100, 0x5eed);
        for (k, (g, t)) in generators.iter().enumerate() {
            if g.dim() != n || t.len() != n {
                return invalid(format!("generator {k} has the wrong dimension"));
            }
            let det = g.matrix.determinant();
            if (det - 1.0).abs() > 1e-10 {
                return invalid(format!("generator {k} has determinant {det}"));
            }
            for inv in [false, true] {
                let m = if inv { g.inverse() } else { g.clone() };
                for r in &rays {
                    let img = m.apply(r);
                    let scale = img.norm().max(1e-300);
                    if cone.cone_margin(img.as_slice()) < -1e-9 * scale {
                        return invalid(format!("generator {k} does not preserve the cone"));
                    }
                }
            }
        }
        let mut action = GroupAction { generators, word_bound, cached: Vec::new() };
        action.enumerate();
        Ok(action)
    }

    /// The trivial group.
    pub fn trivial(d: usize) -> Self {
        GroupAction {
            generators: Vec::new(),
            word_bound: 0,
            cached: vec![GroupElement {
                linear: LinearMap::identity(d + 1),
                translation: DVector::zeros(d + 1),
                word: Vec::new(),
            }],
        }
    }

    pub fn dim(&self) -> usize {
        self.cached[0].linear.dim()
    }

    fn enumerate(&mut self) {
        let n = self.generators.first().map(|g| g.0.dim()).unwrap_or(1);
        let identity = GroupElement {
            linear: LinearMap::identity(n),
            translation: DVector::zeros(n),
            word: Vec::new(),
        };
        self.cached = vec![identity];
        let mut frontier = vec![0usize];
        for _ in 0..self.word_bound {
            let mut next = Vec::new();
            for &e in &frontier {
                for k in 0..self.generators.len() {
                    for sign in [1i8, -1] {
                        let mut word = self.cached[e].word.clone();
                        if word.last() == Some(&(k, -sign)) {
                            continue;
                        }
                        word.push((k, sign));
                        let (lin, tr) = self.cocycle_extend(&word).expect("valid word");
                        let dup = self.cached.iter().any(|c| {
                            (&c.linear.matrix - &lin.matrix).abs().max() <= 1e-10 * (1.0 + lin.matrix.abs().max())
                        });
                        if !dup {
                            self.cached.push(GroupElement { linear: lin, translation: tr, word });
                            next.push(self.cached.len() - 1);
                        }
                    }
                }
            }
            frontier = next;
        }
    }

    fn generator_power(&self, k: usize, sign: i8) -> (DMatrix<f64>, DVector<f64>) {
        let (g, t) = &self.generators[k];
        if sign > 0 {
            (g.matrix.clone(), t.clone())
        } else {
            let inv = g.inverse().matrix;
            let tr = -(&inv * t);
            (inv, tr)
        }
    }

    /// Compose the affine maps of a word (leftmost letter applied last):
    /// (α, τ(α))∘(β, τ(β)) = (αβ, ατ(β) + τ(α)).
    pub fn cocycle_extend(&self, word: &[(usize, i8)]) -> Result<(LinearMap, DVector<f64>)> {
        let n = self.dim_from_generators();
        let mut lin = DMatrix::identity(n, n);
        let mut tr = DVector::zeros(n);
        for &(k, s) in word {
            if k >= self.generators.len() || s == 0 {
                return invalid(format!("invalid word letter ({k}, {s})"));
            }
            let (g, t) = self.generator_power(k, s);
            tr = &lin * t + tr;
            lin = lin * g;
        }
        Ok((LinearMap { matrix: lin }, tr))
    }

    fn dim_from_generators(&self) -> usize {
        self.generators.first().map(|g| g.0.dim()).unwrap_or_else(|| self.cached[0].linear.dim())
    }

    /// Largest defect of τ(αβ) = ατ(β) + τ(α) over pairs of cached elements.
    pub fn cocycle_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in &self.cached {
            for b in &self.cached {
                let mut word = a.word.clone();
                word.extend_from_slice(&b.word);
                let (_, t) = self.cocycle_extend(&word).expect("valid word");
                let expect = a.linear.apply(&b.translation) + &a.translation;
                worst = worst.max((t - expect).abs().max());
            }
        }
        worst
    }

    /// If τ is a coboundary τ(γ) = (I − γ)v, return v.
    pub fn coboundary_vector(&self) -> Option<DVector<f64>> {
        let n = self.dim();
        if self.generators.is_empty() {
            return Some(DVector::zeros(n));
        }
        let m = self.generators.len();
        let mut a = DMatrix::zeros(m * n, n);
        let mut b = DVector::zeros(m * n);
        for (k, (g, t)) in self.generators.iter().enumerate() {
            let block = DMatrix::identity(n, n) - &g.matrix;
            a.view_mut((k * n, 0), (n, n)).copy_from(&block);
            b.rows_mut(k * n, n).copy_from(t);
        }
        let v = a.clone().svd(true, true).solve(&b, 1e-12).ok()?;
        let resid = (&a * &v - &b).abs().max();
        (resid <= 1e-9 * (1.0 + b.abs().max())).then_some(v)
    }
}

/// Coboundary cocycle τ(γ) = (I − γ)v on the given generators.
pub fn coboundary_cocycle(cone: &ConeModel, generators: Vec<LinearMap>, v: &DVector<f64>, word_bound: usize) -> Result<GroupAction> {
    let n = cone.ambient_dim();
    if v.len() != n {
        return invalid("coboundary vector must have dimension d+1");
    }
    let gens = generators
        .into_iter()
        .map(|g| {
            let t = (DMatrix::identity(n, n) - &g.matrix) * v;
            (g, t)
        })
        .collect();
    GroupAction::new(cone, gens, word_bound)
}

/// Linear map diagonal in the ray basis of a simplicial cone:
/// γ = R diag(λ) R^{−1}.
pub fn ray_diagonal_map(cone: &ConeModel, eigenvalues: &[f64]) -> Result<LinearMap> {
    if cone.kind != ConeKind::Simplicial {
        return invalid("ray-diagonal maps need a simplicial cone");
    }
    if eigenvalues.len() != cone.ambient_dim() {
        return invalid("need one eigenvalue per ray");
    }
    if eigenvalues.iter().any(|&l| l <= 0.0) {
        return invalid("eigenvalues must be positive");
    }
    let prod: f64 = eigenvalues.iter().product();
    if (prod - 1.0).abs() > 1e-10 {
        return invalid(format!("eigenvalue product {prod} is not 1"));
    }
    let r = cone.ray_matrix();
    let m = &r * DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues)) * &cone.ray_inverse;
    LinearMap::special(m)
}

/// Serialized instance: cone plus group with translation parts.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InstanceSpec {
    pub cone: ConeSpec,
    pub group: GroupSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConeSpec {
    pub kind: ConeKind,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rays: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GroupSpec {
    pub generators: Vec<GeneratorSpec>,
    pub word_bound: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GeneratorSpec {
    pub matrix: Vec<Vec<f64>>,
    pub translation: Vec<f64>,
}

impl InstanceSpec {
    pub fn build(&self) -> Result<(ConeModel, GroupAction)> {
        let d = self.cone.d;
        if d == 0 {
            return invalid("dimension must be positive");
        }
        let cone = match (self.cone.kind, &self.cone.rays) {
            (ConeKind::Quadratic, _) => ConeModel::quadratic(d),
            (ConeKind::Simplicial, None) => ConeModel::simplicial(d),
            (ConeKind::Simplicial, Some(rays)) => {
                if rays.len() != d + 1 {
                    return invalid("simplicial cone needs d+1 rays");
                }
                ConeModel::simplicial_from_rays(rays.iter().map(|r| DVector::from_column_slice(r)).collect())?
            }
        };
        let n = d + 1;
        let mut gens = Vec::new();
        for g in &self.group.generators {
            if g.matrix.len() != n || g.matrix.iter().any(|r| r.len() != n) || g.translation.len() != n {
                return invalid("generator matrix must be (d+1)×(d+1) with a (d+1)-vector translation");
            }
            let m = DMatrix::from_fn(n, n, |i, j| g.matrix[i][j]);
            gens.push((LinearMap::special(m)?, DVector::from_column_slice(&g.translation)));
        }
        let action = if gens.is_empty() { GroupAction::trivial(d) } else { GroupAction::new(&cone, gens, self.group.word_bound)? };
        Ok((cone, action))
    }

    pub fn from_parts(cone: &ConeModel, action: &GroupAction) -> Self {
        let n = cone.ambient_dim();
        InstanceSpec {
            cone: ConeSpec {
                kind: cone.kind,
                d: cone.d,
                rays: (cone.kind == ConeKind::Simplicial).then(|| cone.rays.iter().map(|r| r.iter().copied().collect()).collect()),
            },
            group: GroupSpec {
                generators: action
                    .generators
                    .iter()
                    .map(|(g, t)| GeneratorSpec {
                        matrix: (0..n).map(|i| (0..n).map(|j| g.matrix[(i, j)]).collect()).collect(),
                        translation: t.iter().copied().collect(),
                    })
                    .collect(),
                word_bound: action.word_bound,
            },
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("serializable");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Simplicial d = 2 lattice instance with a coboundary cocycle.
pub fn simplicial_lattice_instance(eigenvalues: &[Vec<f64>], v: &[f64], word_bound: usize) -> Result<(ConeModel, GroupAction)> {
    let d = v.len().saturating_sub(1);
    if d == 0 {
        return invalid("coboundary vector must have dimension d+1 >= 2");
    }
    let cone = ConeModel::simplicial(d);
    let gens = eigenvalues.iter().map(|l| ray_diagonal_map(&cone, l)).collect::<Result<Vec<_>>>()?;
    let action = coboundary_cocycle(&cone, gens, &DVector::from_column_slice(v), word_bound)?;
    Ok((cone, action))
}

/// Default lattice for d = 2: two independent ray-diagonal generators.
pub fn default_lattice_eigenvalues() -> Vec<Vec<f64>> {
    vec![vec![2.0, 1.0, 0.5], vec![0.5, 2.0, 1.0]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_simplex_is_centered_with_given_radius() {
        for d in 1..=4 {
            let v = regular_simplex(d, 1.5);
            let sum = v.iter().fold(DVector::zeros(d), |a, b| a + b);
            assert!(sum.norm() < 1e-12);
            assert!(v.iter().all(|p| (p.norm() - 1.5).abs() < 1e-12));
        }
    }

    #[test]
    fn simplicial_sphere_is_normalized_at_origin() {
        for d in 1..=3 {
            let c = ConeModel::simplicial(d);
            let (w, g, _) = c.omega_closed_form(&vec![0.0; d]).unwrap();
            assert!((w + 1.0).abs() < 1e-12, "d={d} ω(0)={w}");
            assert!(g.norm() < 1e-12);
        }
    }

    #[test]
    fn omega2_matches_generic_closed_form() {
        for cone in [ConeModel::quadratic(2), ConeModel::simplicial(2)] {
            let y = [0.13, -0.21];
            let (w, g, h) = cone.omega_closed_form(&y).unwrap();
            let (w2, g2, h2) = cone.omega2(y).unwrap();
            assert!((w - w2).abs() < 1e-14);
            assert!((g[0] - g2[0]).abs() < 1e-13 && (g[1] - g2[1]).abs() < 1e-13);
            assert!((h[(0, 0)] - h2[0]).abs() < 1e-12 && (h[(1, 1)] - h2[1]).abs() < 1e-12 && (h[(0, 1)] - h2[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn exit_param_lands_on_boundary() {
        for cone in [ConeModel::quadratic(2), ConeModel::simplicial(2)] {
            let y = [0.1, 0.05];
            let v = [0.3, -0.4];
            let t = cone.exit_param(&y, &v);
            let p = [y[0] + t * v[0], y[1] + t * v[1]];
            assert!(cone.boundary_distance(&p).abs() < 1e-12);
        }
    }
}
