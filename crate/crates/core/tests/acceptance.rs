//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use conevex::body::{area_measure, c_curvature, curvature_conversion, ma_measure, parallel_volume, steiner_measures, Body, VolumeMode, DEFAULT_STEINER_EPS};
use conevex::cone::{default_lattice_eigenvalues, simplicial_lattice_instance, ConeModel, GroupAction};
use conevex::covolume::{convexity_gap, covolume_with_mc, gateaux_check};
use conevex::grid::{Grid, GridFn};
use conevex::invariant::{area_invariance, dl_covering, equivariance_residual, fundamental_cells, maximal_domain, LogChart, MaximalDomain, TauBody, TorusGrid};
use conevex::minkowski::{grid_tolerance, solve_minkowski, weighted_sup_distance, MinkowskiConfig, MinkowskiProblem, SolveMode};
use conevex::sphere::{solve_affine_sphere, AffineSphere, SphereConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

struct Lattice {
    action: GroupAction,
    torus: Arc<TorusGrid>,
    dmax: MaximalDomain,
    v: [f64; 3],
}

fn lattice(n: usize, word_bound: usize) -> Lattice {
    let (cone, action) = simplicial_lattice_instance(&default_lattice_eigenvalues(), &[1.0, 0.0, 0.0], word_bound).unwrap();
    let chart = LogChart::from_action(&cone, &action).unwrap();
    let torus = Arc::new(TorusGrid::new(chart, n).unwrap());
    let sphere = AffineSphere::closed_form(&cone, 33).unwrap();
    let dmax = maximal_domain(&action, &sphere, None).unwrap();
    let v = dmax.coboundary_vector().unwrap();
    Lattice { action, torus, dmax, v }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1_sphere_accuracy() -> Outcome {
    let cone = ConeModel::quadratic(2);
    let start = Instant::now();
    let s = solve_affine_sphere(&cone, &SphereConfig::new(129)).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let h = s.grid().h();
    let mut e: f64 = 0.0;
    for i in 0..s.grid().len() {
        let y = s.grid().point2(i);
        if s.omega.mask[i] && cone.boundary_distance(&y) >= 2.0 * h {
            e = e.max((s.omega.values[i] + (1.0 - y[0] * y[0] - y[1] * y[1]).sqrt()).abs());
        }
    }
    Ok((e <= 2e-3 && secs <= 60.0, format!("max error {e:.3e} (≤ 2e-3), {secs:.2} s (≤ 60 s)")))
}

fn c2_simplicial_sphere() -> Outcome {
    let cone = ConeModel::simplicial(2);
    let s = solve_affine_sphere(&cone, &SphereConfig::new(97)).map_err(err)?;
    let h = s.grid().h();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..s.grid().len() {
        let y = s.grid().point2(i);
        if !s.omega.mask[i] || cone.boundary_distance(&y) < 2.0 * h {
            continue;
        }
        let g = s.grad_omega[i];
        let x = [g[0], g[1], g[0] * y[0] + g[1] * y[1] - s.omega.values[i]];
        let p: f64 = cone.ray_coordinates(&x).iter().product();
        lo = lo.min(p);
        hi = hi.max(p);
    }
    let spread = (hi - lo) / hi.abs();
    Ok((spread <= 1e-2, format!("relative spread {spread:.3e} (≤ 1e-2) on 97²")))
}

fn c3_steiner() -> Outcome {
    let cone = ConeModel::quadratic(2);
    let sphere = Arc::new(AffineSphere::closed_form(&cone, 129).map_err(err)?);
    let cells = sphere.cells_in_disk([0.0, 0.0], 0.5);
    let vs = sphere.sigma_volume(&cells).map_err(err)?;

    let cone_body = Body::from_fn(sphere.clone(), |_, _| 0.0).map_err(err)?;
    let m0 = steiner_measures(&cone_body, &DEFAULT_STEINER_EPS).map_err(err)?.masses(&cells).map_err(err)?;
    let cone_ok = m0[1].abs() <= 1e-3 * vs && m0[2].abs() <= 1e-3 * vs;

    let t = 0.5;
    let body = Body::sigma_offset(sphere.clone(), [0.1, 0.2, 0.3], t).map_err(err)?;
    let st = steiner_measures(&body, &DEFAULT_STEINER_EPS).map_err(err)?;
    let m = st.masses(&cells).map_err(err)?;
    let rel: Vec<f64> = (0..3).map(|i| (m[i] / (t.powi(i as i32) * vs) - 1.0).abs()).collect();
    let offset_ok = rel.iter().all(|r| *r <= 0.02);

    let mut held_ok = true;
    let mut held = Vec::new();
    for (k, eps) in [0.3, 0.5].into_iter().enumerate() {
        let pred = st.predict(eps, &cells).map_err(err)?;
        let mc = parallel_volume(&body, eps, &cells, VolumeMode::MonteCarlo, 20_000, 7 + k as u64).map_err(err)?;
        let dev = (pred - mc.value).abs();
        held_ok &= dev <= 3.0 * mc.stderr + 0.01 * pred;
        held.push(format!("ε={eps}: |Δ|={dev:.2e} vs {:.2e}", 3.0 * mc.stderr + 0.01 * pred));
    }
    Ok((
        cone_ok && offset_ok && held_ok,
        format!(
            "cone S1,S2/volΣ = {:.1e},{:.1e} (≤ 1e-3); offset rel.err {:.2e},{:.2e},{:.2e} (≤ 2%); held-out {}",
            m0[1] / vs,
            m0[2] / vs,
            rel[0],
            rel[1],
            rel[2],
            held.join(", ")
        ),
    ))
}

fn c4_kink_atom() -> Outcome {
    let g = Grid::square(&[-1.0, -1.0], &[1.0, 1.0], 41).map_err(err)?;
    let f = GridFn::from_fn(g, |_| true, |y| y[0].abs() + y[1].abs()).mark_convex().map_err(err)?;
    let m = ma_measure(&f).map_err(err)?;
    let origin = f.grid.nearest(&[0.0, 0.0]);
    let ok = m.atoms.len() == 1 && m.atoms[0].node == origin && (m.atoms[0].mass - 4.0).abs() <= 1e-12;
    let mass = m.atoms.first().map_or(f64::NAN, |a| a.mass);
    Ok((ok, format!("{} atom(s), mass {mass:.15} (|Δ| ≤ 1e-12)", m.atoms.len())))
}

fn c5_reciprocity() -> Outcome {
    let cone = ConeModel::quadratic(2);
    let sphere = Arc::new(AffineSphere::closed_form(&cone, 129).map_err(err)?);
    let h = sphere.grid().h();
    let body = Body::from_fn(sphere.clone(), |y, om| 0.7 * om + 0.2 * (y[0] * y[0] + 0.5 * y[1] * y[1])).map_err(err)?;
    let area = area_measure(&body).map_err(err)?;
    let phi = c_curvature(&body).map_err(err)?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in body.certified_nodes() {
        if cone.boundary_distance(&body.grid().point2(i)) < 8.0 * h {
            continue;
        }
        worst = worst.max((area.density(i) * phi.values[i] / sphere.sigma_density[i] - 1.0).abs());
        count += 1;
    }
    let unit = Body::from_fn(sphere.clone(), |_, om| om).map_err(err)?;
    let phi1 = c_curvature(&unit).map_err(err)?;
    let dev1 = unit.certified_nodes().iter().map(|&i| (phi1.values[i] - 1.0).abs()).fold(0.0, f64::max);
    Ok((
        count > 0 && worst <= 0.02 && dev1 <= 1e-3,
        format!("max |area·φ/σ − 1| = {worst:.3e} over {count} nodes ≥ 8h (≤ 2%); s=ω: max |φ−1| = {dev1:.1e} (≤ 1e-3)"),
    ))
}

fn c6_conversion() -> Outcome {
    let v = curvature_conversion(2.0, 2).map_err(err)?;
    let exact = 2f64.powf(1.5);
    let dev = (v - exact).abs();
    Ok((dev <= 4.0 * f64::EPSILON * exact, format!("κ=2, d=2 → {v:.16} (2^{{3/2}} = {exact:.16})")))
}

fn c7_covolume() -> Outcome {
    let l = lattice(64, 6);
    let body = TauBody::sigma_offset(l.torus.clone(), l.v, 0.5);
    let vs = l.torus.sigma_volume();
    let rep = covolume_with_mc(&body, &l.dmax, &l.action, 8, 200_000, 11).map_err(err)?;
    let target = 0.125 / 3.0 * vs;
    let rel = (rep.value / target - 1.0).abs();
    let est = rep.mc_estimate.unwrap();
    let se = rep.mc_stderr.unwrap();
    let z = (est - rep.value).abs() / se;
    Ok((rel <= 0.02 && z <= 3.0, format!("covol/(0.125/3·volΣ) − 1 = {rel:.2e} (≤ 2%); MC {est:.5} ± {se:.5} vs {:.5}, {z:.2} σ (≤ 3)", rep.value)))
}

/// Strictly convex smooth τ-body: a Σ-offset of height `base` with small
/// Fourier modes of relative amplitude at most `amp`.
fn random_body(l: &Lattice, rng: &mut ChaCha8Rng, amp: f64) -> TauBody {
    let base: f64 = rng.gen_range(0.2..1.0);
    let c: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0) * amp / 3.0);
    let ph: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
    let mut b = TauBody::from_fn(l.torus.clone(), l.v, |t| {
        base * (1.0
            + c[0] * (2.0 * PI * t[0] + ph[0]).cos()
            + c[1] * (2.0 * PI * t[1] + ph[1]).cos()
            + c[2] * (2.0 * PI * (t[0] + t[1]) + ph[2]).cos())
    });
    b.convexify();
    b
}

fn c8_convexity() -> Outcome {
    let l = lattice(32, 2);
    let vs = l.torus.sigma_volume();
    let tol = 1e-12 * vs;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut min_gap = f64::INFINITY;
    for _ in 0..100 {
        let a = random_body(&l, &mut rng, 2e-3);
        let b = random_body(&l, &mut rng, 2e-3);
        min_gap = min_gap.min(convexity_gap(&a, &b, 0.5, &l.dmax, 8).map_err(err)? / vs);
    }
    let k0 = TauBody::sigma_offset(l.torus.clone(), l.v, 0.3);
    let k1 = TauBody::sigma_offset(l.torus.clone(), l.v, 0.7);
    let gap = convexity_gap(&k0, &k1, 0.5, &l.dmax, 8).map_err(err)?;
    // ((0.3³ + 0.7³)/2 − 0.5³)·volΣ/3
    let expected = ((0.3f64.powi(3) + 0.7f64.powi(3)) / 2.0 - 0.125) * vs / 3.0;
    let rel = (gap / expected - 1.0).abs();
    Ok((
        min_gap >= -tol / vs && rel <= 0.05,
        format!("min gap/volΣ over 100 random pairs {min_gap:.3e} (≥ −1e-12); 0.3/0.7 pair gap/volΣ = {:.5} vs ((0.3³+0.7³)/2−0.5³)/3 = {:.5}, rel.err {rel:.2e} (≤ 5%)", gap / vs, expected / vs),
    ))
}

fn c9_gateaux() -> Outcome {
    let l = lattice(32, 2);
    let body = TauBody::sigma_offset(l.torus.clone(), l.v, 0.5);
    let ts: Vec<f64> = (0..6).map(|k| 1e-2 / 2f64.powi(k)).collect();
    let f = vec![1.0; l.torus.len()];
    let rep = gateaux_check(&body, &f, &ts, &l.dmax, 8).map_err(err)?;
    let errs: Vec<f64> = rep.steps.iter().map(|s| s.relative_error).collect();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let bump: Vec<f64> = l.torus.theta.iter().map(|t| 0.25 * (1.0 + (2.0 * PI * t[0]).cos()) * (1.0 + (2.0 * PI * t[1]).cos())).collect();
    let brep = gateaux_check(&body, &bump, &ts, &l.dmax, 8).map_err(err)?;
    let berrs: Vec<String> = brep.steps.iter().map(|s| format!("{:.3}", s.relative_error)).collect();
    Ok((
        errs[0] <= 0.05 && monotone,
        format!(
            "f≡1: rel.err at t=1e-2 {:.3e} (≤ 5%), halving t: {:?}, monotone {monotone}; bump (reported only): {}",
            errs[0],
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            berrs.join(" ")
        ),
    ))
}

fn c10_minkowski() -> Outcome {
    let l = lattice(64, 2);
    let tol = grid_tolerance(&l.torus);
    let solve = |mu: conevex::body::DiscreteMeasure, mode: SolveMode, init: Option<f64>| {
        let cfg = MinkowskiConfig { mode, initial_offset: init, ..Default::default() };
        let p = MinkowskiProblem::new(mu, l.torus.clone(), l.dmax.clone(), cfg).map_err(err)?;
        solve_minkowski(&p).map_err(err)
    };
    let zero = l.torus.sigma_measure().scaled(0.0);
    let (b0, _) = solve(zero, SolveMode::Variational, None)?;
    let e0 = weighted_sup_distance(&b0, &TauBody::sigma_offset(l.torus.clone(), l.v, 0.0)).map_err(err)?;

    let mu = l.torus.sigma_measure().scaled(0.25);
    let truth = TauBody::sigma_offset(l.torus.clone(), l.v, 0.5);
    let (bv, tv) = solve(mu.clone(), SolveMode::Variational, None)?;
    let (bn, _) = solve(mu.clone(), SolveMode::Newton, None)?;
    let (b1, t1) = solve(mu, SolveMode::Variational, Some(1.0))?;
    let ev = weighted_sup_distance(&bv, &truth).map_err(err)?;
    let en = weighted_sup_distance(&bn, &truth).map_err(err)?;
    let mono = [tv.l_values(), t1.l_values()].iter().all(|ls| ls.windows(2).all(|w| w[1] <= w[0]));
    let inits = weighted_sup_distance(&bv, &b1).map_err(err)?;
    let modes = weighted_sup_distance(&bv, &bn).map_err(err)?;
    Ok((
        e0 <= tol && ev <= 5e-2 && en <= 5e-2 && mono && inits <= 2.0 * tol && modes <= tol,
        format!(
            "μ=0 error {e0:.1e} (≤ {tol:.3e}); μ=0.25σ error variational {ev:.1e}, newton {en:.1e} (≤ 5e-2); L nonincreasing {mono}; init t0 vs 1.0 {inits:.1e} (≤ {:.3e}); modes {modes:.1e}",
            2.0 * tol
        ),
    ))
}

fn c11_invariance() -> Outcome {
    let (cone, action) = simplicial_lattice_instance(&default_lattice_eigenvalues(), &[1.0, 0.0, 0.0], 6).map_err(err)?;
    let v = action.coboundary_vector().unwrap();
    let sphere = Arc::new(AffineSphere::closed_form(&cone, 129).map_err(err)?);
    let chart = LogChart::from_action(&cone, &action).map_err(err)?;
    let cells = fundamental_cells(&sphere, &chart);
    let body = Body::sigma_offset(sphere.clone(), [v[0], v[1], v[2]], 0.5).map_err(err)?;
    let eq = equivariance_residual(&body.support, &sphere, &action, &cells, 2000, 7).map_err(err)?;
    let eq_ok = eq.max_excess <= 1e-6;

    let mut worst: f64 = 0.0;
    for elem in action.cached.iter().filter(|e| e.word.len() == 1) {
        let (a, b) = area_invariance(&body, elem, &cells).map_err(err)?;
        worst = worst.max((b / a - 1.0).abs());
    }
    let area_ok = worst <= 0.02;

    let dmax = maximal_domain(&action, &sphere, None).map_err(err)?;
    let cov = dl_covering(&action, &dmax, &cone, [0.0, 0.0], 10_000, 0.8, 7).map_err(err)?;
    let dl_ok = cov.fraction >= 0.99;
    Ok((
        eq_ok && area_ok && dl_ok,
        format!(
            "equivariance max(defect − interp. bound) {:.2e} (≤ 1e-6, {} samples, {} escaped); area invariance max rel. change {worst:.2e} (≤ 2%); DL covering {:.2}% of 1e4 (≥ 99%)",
            eq.max_excess,
            eq.samples,
            eq.escaped,
            100.0 * cov.fraction
        ),
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 affine-sphere accuracy", c1_sphere_accuracy),
        ("2 simplicial affine sphere", c2_simplicial_sphere),
        ("3 Steiner formula", c3_steiner),
        ("4 MA-measure exactness", c4_kink_atom),
        ("5 area/curvature reciprocity", c5_reciprocity),
        ("6 curvature conversion", c6_conversion),
        ("7 covolume closed form", c7_covolume),
        ("8 convexity", c8_convexity),
        ("9 Gateaux identity", c9_gateaux),
        ("10 Minkowski roundtrip", c10_minkowski),
        ("11 invariance suite", c11_invariance),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let (ok, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!("{} [{name}] {detail} ({:.1} s)", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
