//! Small numerical kernels shared by the geometry modules: finite-difference
//! weights, quadrature, convex polygon clipping, sparse solves and a dense
//! simplex for tiny linear programs.

use crate::error::{Error, Result};

/// Finite-difference weights for the `m`-th derivative at 0 on the nodes `z`
/// (Fornberg's recursion). Exact for polynomials of degree `z.len() - 1`.
pub fn fornberg(z: &[f64], m: usize) -> Vec<f64> {
    let n = z.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = z[0];
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = z[i];
        for j in 0..i {
            let c3 = z[i] - z[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(0.5 * (1.0 - x));
        weights.push(0.5 * w);
    }
    (nodes, weights)
}

/// Pairwise summation; deterministic and independent of thread schedule.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn binomial(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r *= (n - i) as f64 / (i + 1) as f64;
    }
    r
}

pub const BOX_EDGE: usize = usize::MAX;

/// Convex polygon whose edges remember the constraint that produced them.
/// Edge `i` runs from `verts[i]` to `verts[i+1]` and carries `labels[i]`.
#[derive(Clone, Debug, Default)]
pub struct Polygon {
    pub verts: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
}

impl Polygon {
    pub fn rect(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Polygon {
            verts: vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]],
            labels: vec![BOX_EDGE; 4],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.verts.len() < 3
    }

    /// Keep the part where `a·p <= b`; the new edge is tagged `label`.
    pub fn clip(&self, a: [f64; 2], b: f64, label: usize) -> Polygon {
        let n = self.verts.len();
        if n == 0 {
            return self.clone();
        }
        let scale = (a[0].abs() + a[1].abs()).max(1e-300);
        let side = |p: [f64; 2]| (a[0] * p[0] + a[1] * p[1] - b) / scale;
        let mut out = Polygon::default();
        for i in 0..n {
            let p = self.verts[i];
            let q = self.verts[(i + 1) % n];
            let (sp, sq) = (side(p), side(q));
            let pin = sp <= 0.0;
            let qin = sq <= 0.0;
            if pin {
                out.verts.push(p);
                out.labels.push(self.labels[i]);
                if !qin {
                    let t = sp / (sp - sq);
                    out.verts.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                    out.labels.push(label);
                }
            } else if qin {
                let t = sp / (sp - sq);
                out.verts.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
                out.labels.push(self.labels[i]);
            }
        }
        out
    }

    pub fn area(&self) -> f64 {
        let n = self.verts.len();
        if n < 3 {
            return 0.0;
        }
        let mut a = 0.0;
        for i in 0..n {
            let p = self.verts[i];
            let q = self.verts[(i + 1) % n];
            a += p[0] * q[1] - p[1] * q[0];
        }
        (0.5 * a).max(0.0)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for p in &self.verts {
            for q in &self.verts {
                d = d.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        d
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        let n = self.verts.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|i| {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -tol
        })
    }

    /// Total length of the edges carrying `label`.
    pub fn edge_lengths(&self) -> Vec<(usize, f64)> {
        let n = self.verts.len();
        let mut out: Vec<(usize, f64)> = Vec::new();
        if n < 3 {
            return out;
        }
        for i in 0..n {
            let p = self.verts[i];
            let q = self.verts[(i + 1) % n];
            let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            if len == 0.0 {
                continue;
            }
            match out.iter_mut().find(|(l, _)| *l == self.labels[i]) {
                Some(e) => e.1 += len,
                None => out.push((self.labels[i], len)),
            }
        }
        out
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Build from per-row entry lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut ptr = Vec::with_capacity(n + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for (c, v) in row {
                if c == last {
                    *val.last_mut().unwrap() += v;
                } else {
                    idx.push(c);
                    val.push(v);
                    last = c;
                }
            }
            ptr.push(idx.len());
        }
        Csr { n, ptr, idx, val }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.ptr[i]..self.ptr[i + 1]).map(move |k| (self.idx[k], self.val[k]))
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).filter(|(j, _)| *j == i).map(|e| e.1).sum())
            .collect()
    }

    /// Solve `A x = b` by sparse LU with fill-reducing ordering.
    pub fn solve_lu(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut count = vec![0usize; n + 1];
        for &c in &self.idx {
            count[c + 1] += 1;
        }
        for c in 0..n {
            count[c + 1] += count[c];
        }
        let nnz = self.idx.len();
        let mut a = rsparse::data::Sprs::zeros(n, n, nnz);
        let mut next = count.clone();
        for r in 0..n {
            for (c, v) in self.row(r) {
                let p = next[c];
                a.i[p] = r;
                a.x[p] = v;
                next[c] += 1;
            }
        }
        a.p = count.iter().map(|&c| c as isize).collect();
        let mut x = b.to_vec();
        rsparse::lusol(&a, &mut x, 1, 1.0).map_err(|e| Error::Singular(format!("sparse LU: {e:?}")))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("sparse LU produced non-finite values".into()));
        }
        Ok(x)
    }
}

/// Preconditioned conjugate gradients for symmetric positive definite `A`.
/// Returns the solution and the number of iterations used.
pub fn conjugate_gradient(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let n = a.n;
    let d: Vec<f64> = a.diag().iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = dot(b, b).sqrt().max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(&d).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return (x, it);
        }
        let ap = a.mul(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return (x, it);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = r.iter().zip(&d).map(|(r, d)| r * d).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, max_iter)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `min cᵀλ  s.t.  Aλ = b, λ >= 0` for a tall-thin `A` (few rows).
/// Returns the optimal value and the basic columns. Two-phase tableau simplex
/// with Bland's rule.
pub fn simplex_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<(f64, Vec<(usize, f64)>)> {
    let m = a.len();
    let n = c.len();
    let cols = n + m;
    // Tableau rows: m constraints, then the objective row.
    let mut t = vec![vec![0.0; cols + 1]; m + 1];
    for i in 0..m {
        let sgn = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sgn * a[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][cols] = sgn * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let tol = 1e-11;

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, allowed: usize| -> Result<()> {
        for _ in 0..10_000 {
            let obj = &t[m];
            let enter = (0..allowed).find(|&j| obj[j] < -tol);
            let Some(e) = enter else { return Ok(()) };
            let mut leave = None;
            let mut best = f64::INFINITY;
            for i in 0..m {
                if t[i][e] > tol {
                    let ratio = t[i][cols] / t[i][e];
                    if ratio < best - 1e-14 || (ratio <= best + 1e-14 && leave.map_or(true, |l: usize| basis[i] < basis[l])) {
                        best = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(l) = leave else {
                return Err(Error::Invalid("unbounded linear program".into()));
            };
            let piv = t[l][e];
            for v in t[l].iter_mut() {
                *v /= piv;
            }
            for i in 0..=m {
                if i != l {
                    let f = t[i][e];
                    if f != 0.0 {
                        for j in 0..=cols {
                            t[i][j] -= f * t[l][j];
                        }
                    }
                }
            }
            basis[l] = e;
        }
        Err(Error::NonConvergence("simplex iteration cap".into()))
    };

    // Phase 1: minimize the sum of artificials.
    for j in 0..=cols {
        t[m][j] = 0.0;
    }
    for i in 0..m {
        for j in 0..n {
            t[m][j] -= t[i][j];
        }
        t[m][cols] -= t[i][cols];
    }
    run(&mut t, &mut basis, n)?;
    if -t[m][cols] > 1e-9 * (1.0 + b.iter().map(|v| v.abs()).sum::<f64>()) {
        return Err(Error::OutOfDomain("infeasible linear program".into()));
    }
    // Phase 2 objective.
    for j in 0..=cols {
        t[m][j] = if j < n { c[j] } else { 0.0 };
    }
    for i in 0..m {
        let bj = basis[i];
        let f = if bj < n { c[bj] } else { 0.0 };
        if f != 0.0 {
            for j in 0..=cols {
                t[m][j] -= f * t[i][j];
            }
        }
    }
    run(&mut t, &mut basis, n)?;
    let sol: Vec<(usize, f64)> = (0..m).filter(|&i| basis[i] < n).map(|i| (basis[i], t[i][cols])).collect();
    let value = sol.iter().map(|&(j, v)| c[j] * v).sum();
    Ok((value, sol))
}
