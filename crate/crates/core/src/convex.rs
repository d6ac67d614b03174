//! Discrete convex analysis on grids: Legendre–Fenchel transforms,
//! biconjugates, subgradient cells and lower convex envelopes.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridFn};
use crate::linalg::{simplex_min, Polygon};

/// g(y) = max over masked nodes x of (x·y − f(x)), brute force.
/// Ties resolve to the lowest node index.
pub fn legendre_transform(f: &GridFn, target: &Grid) -> Result<GridFn> {
    let nodes: Vec<(Vec<f64>, f64)> = (0..f.grid.len())
        .filter(|&i| f.mask[i])
        .map(|i| (f.grid.coords(i), f.values[i]))
        .collect();
    if nodes.is_empty() {
        return invalid("legendre transform of a function with empty mask");
    }
    if target.dim() != f.grid.dim() {
        return invalid("target grid dimension differs");
    }
    let values: Vec<f64> = (0..target.len())
        .into_par_iter()
        .map(|j| {
            let y = target.coords(j);
            let mut best = f64::NEG_INFINITY;
            for (x, fx) in &nodes {
                let v = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - fx;
                if v > best {
                    best = v;
                }
            }
            best
        })
        .collect();
    let mut g = GridFn::new(target.clone(), values, vec![true; target.len()])?;
    g.convex = true;
    Ok(g)
}

/// Upper envelope of lines `slope·y + icpt` queried at increasing `ys`.
/// `lines` must be sorted by slope.
fn upper_envelope(lines: &[(f64, f64)], ys: &[f64]) -> Vec<f64> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
    // Line b is useless between a and c when c overtakes a before b does.
    let bad = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| (c.1 - a.1) * (b.0 - a.0) >= (b.1 - a.1) * (c.0 - a.0);
    for &l in lines {
        if let Some(last) = hull.last() {
            if last.0 == l.0 {
                if last.1 >= l.1 {
                    continue;
                }
                hull.pop();
            }
        }
        while hull.len() >= 2 && bad(hull[hull.len() - 2], hull[hull.len() - 1], l) {
            hull.pop();
        }
        hull.push(l);
    }
    if hull.is_empty() {
        return vec![f64::NEG_INFINITY; ys.len()];
    }
    let mut k = 0;
    ys.iter()
        .map(|&y| {
            while k + 1 < hull.len() && hull[k + 1].0 * y + hull[k + 1].1 >= hull[k].0 * y + hull[k].1 {
                k += 1;
            }
            hull[k].0 * y + hull[k].1
        })
        .collect()
}

/// Same transform computed axis by axis with linear-time upper envelopes:
/// sup over a product grid is an iterated sup over the axes.
pub fn legendre_transform_separable(f: &GridFn, target: &Grid) -> Result<GridFn> {
    let d = f.grid.dim();
    if target.dim() != d {
        return invalid("target grid dimension differs");
    }
    if f.masked_count() == 0 {
        return invalid("legendre transform of a function with empty mask");
    }
    // Working array with the first k axes already transformed.
    let mut shape = f.grid.shape.clone();
    let mut work: Vec<f64> = f.values.iter().zip(&f.mask).map(|(&v, &m)| if m { -v } else { f64::NEG_INFINITY }).collect();
    for axis in 0..d {
        let xs: Vec<f64> = (0..f.grid.shape[axis]).map(|i| f.grid.lo[axis] + i as f64 * f.grid.spacing(axis)).collect();
        let ys: Vec<f64> = (0..target.shape[axis]).map(|i| target.lo[axis] + i as f64 * target.spacing(axis)).collect();
        let mut new_shape = shape.clone();
        new_shape[axis] = ys.len();
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let new_len: usize = new_shape.iter().product();
        let mut next = vec![f64::NEG_INFINITY; new_len];
        let lines_for = |o: usize, s: usize| -> Vec<(f64, f64)> {
            (0..xs.len())
                .filter_map(|i| {
                    let v = work[(o * xs.len() + i) * stride + s];
                    v.is_finite().then_some((xs[i], v))
                })
                .collect()
        };
        let results: Vec<(usize, usize, Vec<f64>)> = (0..outer)
            .into_par_iter()
            .flat_map_iter(|o| (0..stride).map(move |s| (o, s)))
            .map(|(o, s)| (o, s, upper_envelope(&lines_for(o, s), &ys)))
            .collect();
        for (o, s, vals) in results {
            for (k, v) in vals.into_iter().enumerate() {
                next[(o * ys.len() + k) * stride + s] = v;
            }
        }
        work = next;
        shape = new_shape;
    }
    let mut g = GridFn::new(target.clone(), work, vec![true; target.len()])?;
    g.convex = true;
    Ok(g)
}

/// Slope grid for the conjugate: bounding box of the observed difference
/// quotients plus one cell of margin, refined by `factor`.
pub fn slope_grid(f: &GridFn, factor: usize) -> Result<Grid> {
    let g = &f.grid;
    let d = g.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..g.len() {
        if !f.mask[i] {
            continue;
        }
        for k in 0..d {
            let mut off = vec![0isize; d];
            off[k] = 1;
            if let Some(j) = g.offset(i, &off) {
                if f.mask[j] {
                    let s = (f.values[j] - f.values[i]) / g.spacing(k);
                    lo[k] = lo[k].min(s);
                    hi[k] = hi[k].max(s);
                }
            }
        }
    }
    let shape: Vec<usize> = g.shape.iter().map(|&n| (n - 1) * factor.max(1) + 1).collect();
    for k in 0..d {
        if !lo[k].is_finite() {
            return invalid("no adjacent masked nodes to estimate slopes");
        }
        let span = (hi[k] - lo[k]).max(1e-12);
        let cell = span / (shape[k] - 3) as f64;
        lo[k] -= cell;
        hi[k] += cell;
    }
    Grid::new(lo, hi, shape)
}

/// f** via two discrete transforms; convex minorant of f on its mask.
pub fn biconjugate(f: &GridFn) -> Result<GridFn> {
    biconjugate_refined(f, 1)
}

pub fn biconjugate_refined(f: &GridFn, factor: usize) -> Result<GridFn> {
    if f.masked_count() == 0 {
        return invalid("biconjugate of a function with empty mask");
    }
    let p = slope_grid(f, factor)?;
    let g = legendre_transform_separable(f, &p)?;
    let mut back = legendre_transform_separable(&g, &f.grid)?;
    for i in 0..back.values.len() {
        back.mask[i] = f.mask[i];
        if !f.mask[i] {
            back.values[i] = 0.0;
        }
    }
    back.convex = true;
    Ok(back)
}

/// Subdifferential polytope of a 1-D or 2-D grid function at a node.
#[derive(Clone, Debug)]
pub enum Polytope {
    Interval(f64, f64),
    Polygon(Polygon),
}

impl Polytope {
    pub fn volume(&self) -> f64 {
        match self {
            Polytope::Interval(a, b) => (b - a).max(0.0),
            Polytope::Polygon(p) => p.area(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Polytope::Interval(a, b) => (b - a).max(0.0),
            Polytope::Polygon(p) => p.diameter(),
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        match self {
            Polytope::Interval(a, b) => p[0] >= a - tol && p[0] <= b + tol,
            Polytope::Polygon(poly) => poly.contains([p[0], p[1]], tol),
        }
    }
}

/// Offsets used for subgradient cells: the 5×5 block minus the centre.
pub const CELL_OFFSETS: [(isize, isize); 24] = [
    (-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1),
    (-2, -1), (-2, 1), (2, -1), (2, 1), (-1, -2), (1, -2), (-1, 2), (1, 2),
    (-2, 0), (2, 0), (0, -2), (0, 2), (-2, -2), (-2, 2), (2, -2), (2, 2),
];

/// Slopes p with f(y) + p·(x − y) ≤ f(x) for the masked nodes x around y.
pub fn subgradient_cell(f: &GridFn, node: usize) -> Result<Polytope> {
    if !f.convex {
        return invalid("subgradient cell needs a convex grid function");
    }
    if !f.is_interior(node) {
        return Err(Error::OutOfDomain(format!("node {node} is on the boundary of the mask")));
    }
    let g = &f.grid;
    match g.dim() {
        1 => {
            let h = g.spacing(0);
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for o in [-2isize, -1, 1, 2] {
                if let Some(j) = g.offset(node, &[o]) {
                    if f.mask[j] {
                        let s = (f.values[j] - f.values[node]) / (o as f64 * h);
                        if o > 0 {
                            hi = hi.min(s);
                        } else {
                            lo = lo.max(s);
                        }
                    }
                }
            }
            Ok(Polytope::Interval(lo, hi))
        }
        2 => Ok(Polytope::Polygon(cell_polygon(
            g.point2(node),
            f.values[node],
            CELL_OFFSETS.iter().enumerate().filter_map(|(k, &(di, dj))| {
                g.offset2(node, di, dj).filter(|&j| f.mask[j]).map(|j| (k, g.point2(j), f.values[j]))
            }),
        ))),
        _ => invalid("subgradient cells are implemented for d <= 2"),
    }
}

/// Oliker–Prussner cell {p : f_j + p·(y_k − y_j) ≤ f_k} from neighbour
/// samples `(label, y_k, f_k)`.
pub fn cell_polygon(yj: [f64; 2], fj: f64, neighbours: impl Iterator<Item = (usize, [f64; 2], f64)>) -> Polygon {
    let nb: Vec<(usize, [f64; 2], f64)> = neighbours.collect();
    let mut bound: f64 = 1.0;
    for (_, y, v) in &nb {
        let dist = ((y[0] - yj[0]).powi(2) + (y[1] - yj[1]).powi(2)).sqrt();
        bound = bound.max(4.0 * (v - fj).abs() / dist);
    }
    let mut poly = Polygon::rect([-bound, -bound], [bound, bound]);
    for (label, y, v) in nb {
        let slack = 4.0 * f64::EPSILON * (v.abs() + fj.abs());
        poly = poly.clip([y[0] - yj[0], y[1] - yj[1]], v - fj + slack, label);
        if poly.is_empty() {
            break;
        }
    }
    poly
}

/// Lower convex hull of scattered graph points (y_j, z_j).
#[derive(Clone, Debug)]
pub struct PLGraphHull {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub facets: Vec<HullFacet>,
}

/// Affine piece z = slope·y + offset supported on the listed samples.
#[derive(Clone, Debug, PartialEq)]
pub struct HullFacet {
    pub vertices: Vec<usize>,
    pub slope: Vec<f64>,
    pub offset: f64,
}

/// Lower convex envelope of boundary samples.
pub fn envelope_from_boundary(samples: &[(Vec<f64>, f64)]) -> Result<PLGraphHull> {
    let Some(first) = samples.first() else {
        return invalid("no samples");
    };
    let d = first.0.len();
    if samples.iter().any(|s| s.0.len() != d) {
        return invalid("samples have mixed dimensions");
    }
    if samples.len() < d + 1 {
        return invalid("need at least d+1 samples");
    }
    let m = nalgebra::DMatrix::from_fn(samples.len(), d + 1, |i, j| if j < d { samples[i].0[j] } else { 1.0 });
    let rank = m.svd(false, false).rank(1e-10 * (1.0 + samples.iter().flat_map(|s| s.0.iter()).fold(0.0f64, |a, b| a.max(b.abs()))));
    if rank < d + 1 {
        return invalid("samples do not affinely span the space");
    }
    Ok(PLGraphHull {
        points: samples.iter().map(|s| s.0.clone()).collect(),
        values: samples.iter().map(|s| s.1).collect(),
        facets: Vec::new(),
    })
}

impl PLGraphHull {
    /// Value of the envelope at y with the facet attaining it.
    pub fn eval_with_facet(&self, y: &[f64]) -> Result<(f64, HullFacet)> {
        let d = y.len();
        let n = self.points.len();
        let mut a: Vec<Vec<f64>> = (0..d).map(|k| self.points.iter().map(|p| p[k]).collect()).collect();
        a.push(vec![1.0; n]);
        let mut b = y.to_vec();
        b.push(1.0);
        let (value, basis) = simplex_min(&a, &b, &self.values)?;
        let mut verts: Vec<usize> = basis.iter().map(|e| e.0).collect();
        verts.sort_unstable();
        let facet = self.affine_through(&verts, y, value);
        Ok((value, facet))
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        self.eval_with_facet(y).map(|r| r.0)
    }

    /// Evaluate at many points and record the distinct facets met.
    pub fn discover_facets(&mut self, ys: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ys.len());
        for y in ys {
            let (v, f) = self.eval_with_facet(y)?;
            if !self.facets.iter().any(|g| g.vertices == f.vertices) {
                self.facets.push(f);
            }
            out.push(v);
        }
        Ok(out)
    }

    fn affine_through(&self, verts: &[usize], y: &[f64], value: f64) -> HullFacet {
        let d = y.len();
        // Least-squares fit through the support vertices and the query point.
        let rows = verts.len() + 1;
        let m = nalgebra::DMatrix::from_fn(rows, d + 1, |i, j| {
            let p = if i < verts.len() { &self.points[verts[i]] } else { &y.to_vec() };
            if j < d {
                p[j]
            } else {
                1.0
            }
        });
        let rhs = nalgebra::DVector::from_fn(rows, |i, _| if i < verts.len() { self.values[verts[i]] } else { value });
        let sol = m.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| nalgebra::DVector::zeros(d + 1));
        HullFacet { vertices: verts.to_vec(), slope: sol.rows(0, d).iter().copied().collect(), offset: sol[d] }
    }
}
