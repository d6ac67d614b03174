use std::f64::consts::PI;
use std::sync::Arc;

use conevex::body::{area_measure, c_curvature, ma_measure, parallel_volume, shape_operator_radii, sigma_measure, steiner_measures, Body, VolumeMode, DEFAULT_STEINER_EPS};
use conevex::cone::{coboundary_cocycle, dual_projective_action, ray_diagonal_map, ConeModel, LinearMap};
use conevex::convex::{biconjugate, envelope_from_boundary, legendre_transform, subgradient_cell};
use conevex::grid::{Grid, GridFn};
use conevex::sphere::AffineSphere;
use nalgebra::{DMatrix, DVector};

fn grid1(lo: f64, hi: f64, n: usize) -> Grid {
    Grid::new(vec![lo], vec![hi], vec![n]).unwrap()
}

fn disk_sphere(n: usize) -> Arc<AffineSphere> {
    Arc::new(AffineSphere::closed_form(&ConeModel::quadratic(2), n).unwrap())
}

#[test]
fn identity_dual_action() {
    let cone = ConeModel::quadratic(2);
    let y = dual_projective_action(&cone, &LinearMap::identity(3), &[0.1, 0.2]).unwrap();
    assert_eq!(y.as_slice(), &[0.1, 0.2]);
}

#[test]
fn boost_moves_origin_to_tanh() {
    let a: f64 = 0.3;
    let mut m = DMatrix::identity(3, 3);
    m[(0, 0)] = a.cosh();
    m[(2, 2)] = a.cosh();
    m[(0, 2)] = a.sinh();
    m[(2, 0)] = a.sinh();
    let y = dual_projective_action(&ConeModel::quadratic(2), &LinearMap::special(m).unwrap(), &[0.0, 0.0]).unwrap();
    assert!((y[0] - a.tanh()).abs() < 1e-12 && y[1].abs() < 1e-12);
    assert!((y[0] - 0.2913).abs() < 1e-4);
}

#[test]
fn cocycle_words() {
    let cone = ConeModel::simplicial(2);
    let g = ray_diagonal_map(&cone, &[2.0, 1.0, 0.5]).unwrap();
    let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let action = coboundary_cocycle(&cone, vec![g.clone()], &v, 4).unwrap();

    let (id, t) = action.cocycle_extend(&[]).unwrap();
    assert_eq!(id, LinearMap::identity(3));
    assert_eq!(t.abs().max(), 0.0);

    let (lin, t) = action.cocycle_extend(&[(0, 1), (0, -1)]).unwrap();
    assert!((lin.matrix - DMatrix::identity(3, 3)).abs().max() < 1e-12 && t.abs().max() < 1e-12);

    let expect = (DMatrix::identity(3, 3) - &g.matrix) * &v;
    assert!((&action.generators[0].1 - expect).abs().max() < 1e-14);
    for e in &action.cached {
        let (lin, t) = action.cocycle_extend(&e.word).unwrap();
        let cob = (DMatrix::identity(3, 3) - &lin.matrix) * &v;
        assert!((t - cob).abs().max() < 1e-10);
    }
    assert!(action.cocycle_defect() < 1e-12);

    let zero = coboundary_cocycle(&cone, vec![g], &DVector::zeros(3), 4).unwrap();
    assert!(zero.cached.iter().all(|e| e.translation.abs().max() == 0.0));
}

#[test]
fn rejects_non_special_generator() {
    let cone = ConeModel::simplicial(2);
    assert!(ray_diagonal_map(&cone, &[2.0, 2.0, 1.0]).and_then(|g| coboundary_cocycle(&cone, vec![g], &DVector::zeros(3), 1)).is_err());
}

#[test]
fn quadratic_is_self_dual() {
    let g = Grid::square(&[-3.0, -3.0], &[3.0, 3.0], 61).unwrap();
    let f = GridFn::from_fn(g, |_| true, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let target = Grid::square(&[-1.0, -1.0], &[1.0, 1.0], 21).unwrap();
    let fs = legendre_transform(&f, &target).unwrap();
    let e = (0..target.len()).map(|j| {
        let y = target.coords(j);
        (fs.values[j] - 0.5 * (y[0] * y[0] + y[1] * y[1])).abs()
    });
    assert!(e.fold(0.0, f64::max) <= 0.1 * 0.1);
}

#[test]
fn conjugate_of_abs_is_zero_on_unit_interval() {
    let f = GridFn::from_fn(grid1(-2.0, 2.0, 81), |_| true, |x| x[0].abs());
    let fs = legendre_transform(&f, &grid1(-1.0, 1.0, 21)).unwrap();
    assert!(fs.values.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn conjugate_of_quartic() {
    let f = GridFn::from_fn(grid1(-2.0, 2.0, 401), |_| true, |x| x[0].powi(4) / 4.0);
    let target = grid1(-1.0, 1.0, 21);
    let fs = legendre_transform(&f, &target).unwrap();
    // Brute-force maximum on a ten times finer grid.
    let fine: Vec<f64> = (0..4001).map(|k| -2.0 + 4.0 * k as f64 / 4000.0).collect();
    for j in 0..target.len() {
        let y = target.coords(j)[0];
        let brute = fine.iter().map(|x| x * y - x.powi(4) / 4.0).fold(f64::NEG_INFINITY, f64::max);
        assert!((fs.values[j] - brute).abs() < 1e-4);
        assert!((fs.values[j] - 0.75 * y.abs().powf(4.0 / 3.0)).abs() < 1e-4);
    }
}

#[test]
fn biconjugate_examples() {
    let g = Grid::square(&[-1.0, -1.0], &[1.0, 1.0], 41).unwrap();
    let h = g.h();
    let q = GridFn::from_fn(g.clone(), |_| true, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let qq = biconjugate(&q).unwrap();
    assert!(q.values.iter().zip(&qq.values).all(|(a, b)| (a - b).abs() <= h));

    let aff = GridFn::from_fn(g.clone(), |_| true, |x| 0.3 * x[0] - 0.7 * x[1] + 0.2);
    let aa = biconjugate(&aff).unwrap();
    assert!(aff.values.iter().zip(&aa.values).all(|(a, b)| (a - b).abs() < 1e-12));

    // Two wells at (±0.3, 0): the hull is flat (value 0) between them.
    let wells = GridFn::from_fn(g.clone(), |_| true, |x| ((x[0] - 0.3).powi(2) + x[1] * x[1]).min((x[0] + 0.3).powi(2) + x[1] * x[1]));
    let ww = biconjugate(&wells).unwrap();
    for i in 0..g.len() {
        let y = g.coords(i);
        if y[0].abs() <= 0.3 && y[1].abs() < 1e-12 {
            assert!(ww.values[i].abs() <= h * h);
        }
        assert!(ww.values[i] <= wells.values[i] + 1e-12);
    }
}

#[test]
fn subgradient_cells() {
    let g = Grid::square(&[-1.0, -1.0], &[1.0, 1.0], 41).unwrap();
    let h = g.h();
    let q = GridFn::from_fn(g.clone(), |_| true, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).mark_convex().unwrap();
    let node = g.nearest(&[0.2, 0.0]);
    let cell = subgradient_cell(&q, node).unwrap();
    assert!(cell.contains(&[0.2, 0.0], 1e-12) && cell.diameter() <= 2.0 * h);

    let k = GridFn::from_fn(g.clone(), |_| true, |x| x[0].abs() + x[1].abs()).mark_convex().unwrap();
    let sq = subgradient_cell(&k, g.nearest(&[0.0, 0.0])).unwrap();
    assert!((sq.volume() - 4.0).abs() < 1e-12);

    let aff = GridFn::from_fn(g.clone(), |_| true, |x| 0.4 * x[0] - 0.1 * x[1]).mark_convex().unwrap();
    let pt = subgradient_cell(&aff, node).unwrap();
    assert!(pt.volume() < 1e-12 && pt.contains(&[0.4, -0.1], 1e-9));
}

#[test]
fn envelope_examples() {
    let hull = envelope_from_boundary(&[(vec![-1.0], 1.0), (vec![1.0], 0.0)]).unwrap();
    for y in [-0.5, 0.0, 0.25, 0.9] {
        assert!((hull.eval(&[y]).unwrap() - (1.0 - y) / 2.0).abs() < 1e-12);
    }
    let v = [0.3, -0.2, 0.5];
    let ring: Vec<(Vec<f64>, f64)> = (0..24)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 24.0;
            let y = vec![a.cos(), a.sin()];
            let val = v[0] * y[0] + v[1] * y[1] - v[2];
            (y, val)
        })
        .collect();
    let hull = envelope_from_boundary(&ring).unwrap();
    let flat = envelope_from_boundary(&ring.iter().map(|(y, _)| (y.clone(), 0.0)).collect::<Vec<_>>()).unwrap();
    for y in [[0.0, 0.0], [0.4, -0.3], [-0.6, 0.1]] {
        assert!((hull.eval(&y).unwrap() - (v[0] * y[0] + v[1] * y[1] - v[2])).abs() < 1e-12);
        assert!(flat.eval(&y).unwrap().abs() < 1e-12);
    }
}

#[test]
fn sphere_values_and_normals() {
    let s = disk_sphere(129);
    assert!((s.omega_at([0.0, 0.0]).unwrap() + 1.0).abs() < 1e-12);
    let n0 = s.c_normal([0.0, 0.0]).unwrap();
    assert!(n0[0].abs() < 1e-12 && n0[1].abs() < 1e-12 && (n0[2] - 1.0).abs() < 1e-12);
    let n = s.c_normal([0.5, 0.0]).unwrap();
    let expect = [1.0 / 3f64.sqrt(), 0.0, 2.0 / 3f64.sqrt()];
    assert!((0..3).all(|k| (n[k] - expect[k]).abs() < 1e-6));
    let m = s.c_normal([-0.5, 0.0]).unwrap();
    assert!((m[0] + n[0]).abs() < 1e-12 && (m[2] - n[2]).abs() < 1e-12);
    assert!(s.c_normal([0.999, 0.0]).is_err());
}

#[test]
fn sigma_volume_of_half_disk() {
    let s = disk_sphere(257);
    let cells = s.cells_in_disk([0.0, 0.0], 0.5);
    let v = s.sigma_volume(&cells).unwrap();
    let exact = 2.0 * PI * (2.0 / 3f64.sqrt() - 1.0);
    // Cells are a staircase approximation of the disk.
    assert!((v / exact - 1.0).abs() < 1e-2);
    assert_eq!(s.sigma_volume(&[]).unwrap(), 0.0);
    let (a, b): (Vec<usize>, Vec<usize>) = cells.iter().partition(|&&c| s.grid().point2(c)[0] < 0.0);
    let sum = s.sigma_volume(&a).unwrap() + s.sigma_volume(&b).unwrap();
    assert!((sum - v).abs() <= 1e-12 * v);
}

#[test]
fn ma_measure_examples() {
    let g = Grid::square(&[-1.0, -1.0], &[1.0, 1.0], 41).unwrap();
    let q = GridFn::from_fn(g.clone(), |_| true, |x| 0.5 * (x[0] * x[0] + x[1] * x[1])).mark_convex().unwrap();
    let m = ma_measure(&q).unwrap();
    for i in 0..g.len() {
        if m.valid[i] {
            assert!((m.mass[i] - g.cell_volume()).abs() < 1e-12);
        }
    }
    assert!(m.atoms.is_empty());
}

#[test]
fn area_measure_examples() {
    let s = disk_sphere(129);
    let t = 0.5;
    let body = Body::sigma_offset(s.clone(), [0.0; 3], t).unwrap();
    let a = area_measure(&body).unwrap();
    let sig = sigma_measure(&body);
    let cells = s.cells_in_disk([0.0, 0.0], 0.6);
    let ratio = a.mass_of(&cells).unwrap() / sig.mass_of(&cells).unwrap();
    assert!((ratio - t * t).abs() < 2e-2 * t * t);

    let flat = Body::from_fn(s.clone(), |y, _| 0.2 * y[0] - 0.4 * y[1] - 1.0).unwrap();
    assert!(area_measure(&flat).unwrap().total().abs() < 1e-12);
}

#[test]
fn parallel_volume_of_sigma_body() {
    let s = disk_sphere(129);
    let cells = s.cells_in_disk([0.0, 0.0], 0.5);
    let vs = s.sigma_volume(&cells).unwrap();
    let body = Body::from_fn(s.clone(), |_, om| om).unwrap();
    for eps in [0.1, 0.3, 0.6] {
        let v = parallel_volume(&body, eps, &cells, VolumeMode::Smooth, 0, 0).unwrap().value;
        let exact = ((1.0 + eps).powi(3) - 1.0) / 3.0 * vs;
        assert!((v / exact - 1.0).abs() < 1e-3, "ε = {eps}: {v} vs {exact}");
    }
    let cone = Body::from_fn(s.clone(), |_, _| 0.0).unwrap();
    let eps = 0.4;
    let mc = parallel_volume(&cone, eps, &cells, VolumeMode::MonteCarlo, 20_000, 5).unwrap();
    let exact = eps.powi(3) / 3.0 * vs;
    assert!((mc.value - exact).abs() <= 3.0 * mc.stderr + 0.01 * exact);
    assert!(parallel_volume(&body, 0.0, &cells, VolumeMode::Smooth, 0, 0).is_err());
}

#[test]
fn parallel_volume_vague_limit() {
    let s = disk_sphere(129);
    let cells = s.cells_in_disk([0.1, 0.0], 0.4);
    let body = Body::from_fn(s.clone(), |y, om| 0.6 * om + 0.1 * (y[0] * y[0] + y[1] * y[1])).unwrap();
    let area = area_measure(&body).unwrap().mass_of(&cells).unwrap();
    let gaps: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&e| (parallel_volume(&body, e, &cells, VolumeMode::Smooth, 0, 0).unwrap().value / e - area).abs())
        .collect();
    assert!(gaps[1] < gaps[0] && gaps[2] < gaps[1]);
    assert!(gaps[2] < 0.05 * area);
}

#[test]
fn steiner_homogeneity() {
    let s = disk_sphere(129);
    let cells = s.cells_in_disk([0.0, 0.1], 0.5);
    let f = |l: f64| move |y: [f64; 2], om: f64| l * (0.6 * om + 0.1 * (y[0] * y[0] + 0.5 * y[1] * y[1])) + 0.2 * y[0] - 0.1;
    let base = steiner_measures(&Body::from_fn(s.clone(), f(1.0)).unwrap(), &DEFAULT_STEINER_EPS).unwrap().masses(&cells).unwrap();
    for l in [0.5, 2.0] {
        let m = steiner_measures(&Body::from_fn(s.clone(), f(l)).unwrap(), &DEFAULT_STEINER_EPS).unwrap().masses(&cells).unwrap();
        for i in 0..3 {
            assert!((m[i] / (l.powi(i as i32) * base[i]) - 1.0).abs() < 0.02, "λ = {l}, i = {i}");
        }
    }
    // S_0 is the Σ-volume and S_2 the area measure.
    let body = Body::from_fn(s.clone(), f(1.0)).unwrap();
    assert!((base[0] / s.sigma_volume(&cells).unwrap() - 1.0).abs() < 0.02);
    let area = area_measure(&body).unwrap().mass_of(&cells).unwrap();
    assert!((base[2] / area - 1.0).abs() < 0.02);
}

#[test]
fn steiner_matches_radii() {
    let s = disk_sphere(129);
    let body = Body::from_fn(s.clone(), |y, om| 0.6 * om + 0.1 * (y[0] * y[0] + 0.5 * y[1] * y[1])).unwrap();
    let st = steiner_measures(&body, &DEFAULT_STEINER_EPS).unwrap();
    let h = s.grid().h();
    for op in shape_operator_radii(&body).unwrap() {
        if s.cone.boundary_distance(&s.grid().point2(op.node)) < 8.0 * h {
            continue;
        }
        let sig = op.sigma();
        let vol = s.sigma_density[op.node] * s.grid().cell_volume();
        for i in 0..3 {
            assert!((st.measures[i].mass[op.node] / (sig[i] * vol) - 1.0).abs() < 0.03);
        }
    }
}

#[test]
fn curvature_of_scaled_sphere() {
    let s = disk_sphere(65);
    let t = 0.5;
    let body = Body::sigma_offset(s.clone(), [0.0; 3], t).unwrap();
    let phi = c_curvature(&body).unwrap();
    assert!(body.certified_nodes().iter().all(|&i| (phi.values[i] * t * t - 1.0).abs() < 1e-9));
    let shifted = Body::from_fn(s.clone(), |y, om| om + 0.3 * y[0] - 0.2).unwrap();
    let phi = c_curvature(&shifted).unwrap();
    assert!(shifted.certified_nodes().iter().all(|&i| (phi.values[i] - 1.0).abs() < 1e-9));
}
