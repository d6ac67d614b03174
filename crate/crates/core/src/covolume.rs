//! Covolume of τ-convex domains: the quotient volume between ∂D_τ and ∂K.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cone::GroupAction;
use crate::error::{invalid, Error, Result};
use crate::invariant::{MaximalDomain, TauBody, TorusGrid};
use crate::linalg::{gauss_legendre, pairwise_sum};

#[derive(Clone, Debug, Default, Serialize)]
pub struct CovolumeReport {
    pub value: f64,
    pub path_samples: usize,
    pub mc_estimate: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub mc_samples: usize,
    /// Region hits in the outer 1% of the sampling box.
    pub mc_edge_hits: usize,
    pub word_bound: usize,
    pub sigma_volume: f64,
}

/// ∫₀¹ Σ_j h̄_j A_j(l·h̄) dl by Gauss–Legendre in l.
pub fn covolume_value(torus: &TorusGrid, hbar: &[f64], path_nodes: usize) -> f64 {
    let (x, w) = gauss_legendre(path_nodes);
    let mut total = 0.0;
    for (l, wk) in x.iter().zip(&w) {
        let scaled: Vec<f64> = hbar.iter().map(|v| l * v).collect();
        let a = torus.area(&scaled);
        let terms: Vec<f64> = hbar.iter().zip(&a).map(|(h, a)| h * a).collect();
        total += wk * pairwise_sum(&terms);
    }
    total
}

fn check_inside(b: &TauBody, dmax: &MaximalDomain) -> Result<()> {
    match dmax.coboundary_vector() {
        Some(v) if v == b.v => {}
        _ => return invalid("body and maximal domain use different cocycles"),
    }
    let lo = b.hbar.iter().copied().fold(f64::INFINITY, f64::min);
    if lo < -1e-12 {
        return Err(Error::OutOfDomain(format!("body is not contained in D_τ (min ratio {lo:.3e})")));
    }
    Ok(())
}

/// Path-integral covolume of K relative to D_τ.
pub fn covolume(b: &TauBody, dmax: &MaximalDomain, path_nodes: usize) -> Result<CovolumeReport> {
    check_inside(b, dmax)?;
    if path_nodes == 0 {
        return invalid("need at least one path node");
    }
    Ok(CovolumeReport {
        value: covolume_value(&b.torus, &b.hbar, path_nodes),
        path_samples: path_nodes,
        sigma_volume: b.torus.sigma_volume(),
        ..Default::default()
    })
}

/// Monte Carlo covolume: uniform samples Z (relative to v) in a box around
/// the region, counted when Z ∈ C, Z ∉ K − v and Z lies in the
/// Dirichlet–Lee domain at y0 = 0 (height minimal over the cached orbit).
pub fn covolume_mc(b: &TauBody, dmax: &MaximalDomain, action: &GroupAction, samples: usize, seed: u64) -> Result<(f64, f64, usize)> {
    check_inside(b, dmax)?;
    if samples == 0 {
        return invalid("need at least one sample");
    }
    let torus = &b.torus;
    let chart = &torus.chart;
    let cone = &chart.cone;
    let r = cone.ray_matrix();
    let rinv: DMatrix<f64> = r.try_inverse().ok_or_else(|| Error::Singular("ray matrix".into()))?;
    let tmax = b.hbar.iter().copied().fold(0.0, f64::max);
    // Sampling box: origin and tmax·N(y(θ)) for θ ∈ [−1, 1]².
    let mut lo = [0.0f64; 3];
    let mut hi = [0.0f64; 3];
    let m = 40;
    for i in 0..=m {
        for j in 0..=m {
            let th = [-1.0 + 2.0 * i as f64 / m as f64, -1.0 + 2.0 * j as f64 / m as f64];
            let y = chart.y(th);
            let (om, g, _) = cone.omega2(y).ok_or_else(|| Error::OutOfDomain(format!("{y:?}")))?;
            let nrm = [g[0], g[1], g[0] * y[0] + g[1] * y[1] - om];
            for a in 0..3 {
                lo[a] = lo[a].min(tmax * nrm[a]);
                hi[a] = hi[a].max(tmax * nrm[a]);
            }
        }
    }
    let box_vol: f64 = (0..3).map(|a| hi[a] - lo[a]).product();
    let lin: Vec<DMatrix<f64>> = action.cached.iter().map(|e| e.linear.matrix.clone()).collect();
    let n = torus.n as isize;
    let results: Vec<(bool, bool)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let u: [f64; 3] = std::array::from_fn(|_| rng.gen::<f64>());
            let z = DVector::from_fn(3, |a, _| lo[a] + (hi[a] - lo[a]) * u[a]);
            let c = &rinv * &z;
            if c.iter().any(|&x| x <= 0.0) {
                return (false, false);
            }
            if lin.iter().any(|g| (g * &z)[2] < z[2]) {
                return (false, false);
            }
            // Foot direction: (y, −1) ∝ −∇ log Π c_i.
            let grad = (0..3).fold(DVector::zeros(3), |acc: DVector<f64>, i| acc + rinv.row(i).transpose() / c[i]);
            let yv = [-grad[0] / grad[2], -grad[1] / grad[2]];
            let Ok(th) = chart.theta(yv) else { return (false, false) };
            let ci = ((th[0] + 0.5) * n as f64 - 0.5).round() as isize;
            let cj = ((th[1] + 0.5) * n as f64 - 0.5).round() as isize;
            let w = 4;
            let mut outside = false;
            'search: for di in -w..=w {
                for dj in -w..=w {
                    let (i, j) = (ci + di, cj + dj);
                    let t = [-0.5 + (i as f64 + 0.5) / n as f64, -0.5 + (j as f64 + 0.5) / n as f64];
                    let y = chart.y(t);
                    let Some((om, _, _)) = cone.omega2(y) else { continue };
                    let idx = (i.rem_euclid(n) * n + j.rem_euclid(n)) as usize;
                    if z[0] * y[0] + z[1] * y[1] - z[2] > om * b.hbar[idx] {
                        outside = true;
                        break 'search;
                    }
                }
            }
            let edge = (0..3).any(|a| u[a] < 0.01 || u[a] > 0.99);
            (outside, outside && edge)
        })
        .collect();
    let hits = results.iter().filter(|r| r.0).count();
    let edge = results.iter().filter(|r| r.1).count();
    let p = hits as f64 / samples as f64;
    Ok((box_vol * p, box_vol * (p * (1.0 - p) / samples as f64).sqrt(), edge))
}

/// Path-integral covolume plus the Monte Carlo cross-check.
pub fn covolume_with_mc(b: &TauBody, dmax: &MaximalDomain, action: &GroupAction, path_nodes: usize, samples: usize, seed: u64) -> Result<CovolumeReport> {
    let mut rep = covolume(b, dmax, path_nodes)?;
    let (est, se, edge) = covolume_mc(b, dmax, action, samples, seed)?;
    rep.mc_estimate = Some(est);
    rep.mc_stderr = Some(se);
    rep.mc_samples = samples;
    rep.mc_edge_hits = edge;
    rep.word_bound = action.word_bound;
    Ok(rep)
}

/// (1−t)covol(K0) + t·covol(K1) − covol((1−t)K0 + tK1).
pub fn convexity_gap(b0: &TauBody, b1: &TauBody, t: f64, dmax: &MaximalDomain, path_nodes: usize) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return invalid("t must lie in (0, 1)");
    }
    let mid = b0.combine(b1, t)?;
    let c0 = covolume(b0, dmax, path_nodes)?.value;
    let c1 = covolume(b1, dmax, path_nodes)?.value;
    let cm = covolume(&mid, dmax, path_nodes)?.value;
    Ok((1.0 - t) * c0 + t * c1 - cm)
}

#[derive(Clone, Debug, Serialize)]
pub struct GateauxStep {
    pub t: f64,
    pub quotient: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GateauxReport {
    /// ∫ f/ω dA(K) with the added support function f·ω.
    pub target: f64,
    pub steps: Vec<GateauxStep>,
}

/// Finite-difference slopes of t ↦ covol(K with h̄ + t·f, convexified)
/// against Σ_j f_j A_j(K).
pub fn gateaux_check(b: &TauBody, f: &[f64], ts: &[f64], dmax: &MaximalDomain, path_nodes: usize) -> Result<GateauxReport> {
    if f.len() != b.hbar.len() {
        return invalid("perturbation length does not match the grid");
    }
    let base = covolume(b, dmax, path_nodes)?.value;
    let area = b.area();
    let terms: Vec<f64> = f.iter().zip(&area).map(|(f, a)| f * a).collect();
    let target = pairwise_sum(&terms);
    let mut steps = Vec::new();
    for &t in ts {
        let mut p = b.clone();
        p.hbar.iter_mut().zip(f).for_each(|(h, f)| *h += t * f);
        p.convexify();
        if p.hbar.iter().any(|&h| h < -1e-12) {
            return Err(Error::OutOfDomain(format!("perturbation at t = {t} leaves D_τ")));
        }
        let q = (covolume(&p, dmax, path_nodes)?.value - base) / t;
        steps.push(GateauxStep { t, quotient: q, relative_error: ((q - target) / target).abs() });
    }
    Ok(GateauxReport { target, steps })
}
