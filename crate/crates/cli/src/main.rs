use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use conevex::body::{c_curvature, shape_operator_radii, sigma_measure, steiner_measures, Body, DiscreteMeasure, DEFAULT_STEINER_EPS};
use conevex::cone::{default_lattice_eigenvalues, simplicial_lattice_instance, ConeModel, GroupAction, InstanceSpec};
use conevex::covolume::{covolume, covolume_with_mc};
use conevex::grid::{fmt17, GridFn};
use conevex::invariant::{area_invariance, dl_covering, equivariance_residual, fundamental_cells, maximal_domain, LogChart, MaximalDomain, TauBody, TorusGrid};
use conevex::minkowski::{boundary_contact_guard, residual, solve_minkowski, MinkowskiConfig, MinkowskiProblem, SolveMode};
use conevex::sphere::{solve_affine_sphere, AffineSphere, SphereConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "conevex", version, about = "Convex geometry of cone-asymptotic domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InstanceKind {
    Quadratic,
    SimplicialLatticeCoboundary,
}

#[derive(Subcommand)]
enum Command {
    /// Write an instance spec (cone, generators and cocycle).
    Instance {
        #[arg(long, value_enum)]
        kind: InstanceKind,
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// Generator eigenvalues on the ray basis; repeat once per generator.
        #[arg(long, value_delimiter = ',', num_args = 1, action = clap::ArgAction::Append)]
        eigenvalues: Vec<String>,
        /// Coboundary vector v (τ(γ) = v − γv).
        #[arg(long, value_delimiter = ',', default_value = "1,0,0")]
        v: Vec<f64>,
        #[arg(long, default_value_t = 6)]
        word_bound: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the affine-sphere equation on a Cartesian grid.
    Sphere {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 129)]
        grid: usize,
        /// Sample the closed form instead of solving.
        #[arg(long)]
        closed_form: bool,
        #[arg(long)]
        out: PathBuf,
        /// Solver diagnostics (JSON); printed to stdout when omitted.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Steiner coefficient measures S_0..S_d of a body.
    Steiner {
        #[command(flatten)]
        body: CartesianBodyArgs,
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        /// Totals are taken over nodes at least this many cells from ∂Ω*.
        #[arg(long, default_value_t = 6.0)]
        collar: f64,
        #[arg(long)]
        out: PathBuf,
        /// Directory for the per-coefficient measure CSVs.
        #[arg(long)]
        measures_dir: Option<PathBuf>,
    },
    /// C-curvature and shape-operator radii of a smooth body.
    Curvature {
        #[command(flatten)]
        body: CartesianBodyArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        radii: Option<PathBuf>,
    },
    /// Covolume of a τ-convex domain of a coboundary instance.
    Covolume {
        #[command(flatten)]
        body: TauBodyArgs,
        #[arg(long, default_value_t = 0)]
        mc_samples: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        path_nodes: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the body's area measure on the fundamental cells.
        #[arg(long)]
        area_out: Option<PathBuf>,
    },
    /// Equivariance, area invariance and Dirichlet–Lee covering checks.
    Invariant {
        #[command(flatten)]
        body: CartesianBodyArgs,
        #[arg(long)]
        check_equivariance: bool,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        dl_sample: usize,
        /// Shrink factor of the sampled part of Ω for the covering test.
        #[arg(long, default_value_t = 0.8)]
        window: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the Minkowski problem for a measure on the fundamental cells.
    Minkowski {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, conflicts_with = "sigma_multiple")]
        measure: Option<PathBuf>,
        /// Use μ = c·vol_Σ on the fundamental cells.
        #[arg(long)]
        sigma_multiple: Option<f64>,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value = "variational")]
        mode: String,
        /// Start from s_τ + t·ω.
        #[arg(long)]
        init: Option<f64>,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        residual: Option<PathBuf>,
    },
    /// Collect plot-ready CSV tables from a results directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct CartesianBodyArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Support function on the Cartesian grid over Ω*.
    #[arg(long, conflicts_with = "offset")]
    support: Option<PathBuf>,
    /// Use the body v + C + tΣ instead of a support file.
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    v: Option<Vec<f64>>,
    #[arg(long, default_value_t = 129)]
    grid: usize,
}

#[derive(clap::Args)]
struct TauBodyArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Support values on the θ grid of the fundamental cells.
    #[arg(long, conflicts_with = "offset")]
    support: Option<PathBuf>,
    /// Use D_τ + tΣ instead of a support file.
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long, default_value_t = 64)]
    grid: usize,
}

fn header(kind: &str, spec: &InstanceSpec, seed: Option<u64>, grid: Value) -> Value {
    json!({
        "tool": "conevex",
        "version": VERSION,
        "kind": kind,
        "instance_hash": spec.hash(),
        "seed": seed,
        "grid": grid,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// JSON outputs are two lines: the header, then the payload.
fn write_json(path: &Path, header: &Value, payload: &Value) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    writeln!(w, "{}", serde_json::to_string(payload)?)?;
    w.flush()?;
    Ok(())
}

fn print_json(header: &Value, payload: &Value) {
    println!("{header}");
    println!("{}", serde_json::to_string(payload).expect("serializable"));
}

fn read_json(path: &Path) -> Result<(Value, Value)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let h: Value = serde_json::from_str(lines.next().ok_or_else(|| anyhow!("{} is empty", path.display()))?)?;
    let rest: String = lines.collect::<Vec<_>>().join("\n");
    let p: Value = if rest.is_empty() { Value::Null } else { serde_json::from_str(&rest)? };
    Ok((h, p))
}

/// Accepts a bare spec or a header line followed by the spec.
fn read_instance(path: &Path) -> Result<InstanceSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading instance {}", path.display()))?;
    if let Ok(spec) = serde_json::from_str::<InstanceSpec>(&text) {
        return Ok(spec);
    }
    for line in text.lines() {
        if let Ok(spec) = serde_json::from_str::<InstanceSpec>(line) {
            return Ok(spec);
        }
    }
    Err(conevex::Error::Invalid(format!("{} is not an instance spec", path.display())).into())
}

fn read_gridfn(path: &Path) -> Result<GridFn> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(GridFn::read_csv(BufReader::new(f))?.0)
}

fn write_gridfn(path: &Path, f: &GridFn, header: &Value) -> Result<()> {
    let mut w = create(path)?;
    f.write_csv(&mut w, header)?;
    w.flush()?;
    Ok(())
}

fn write_measure(path: &Path, m: &DiscreteMeasure, header: &Value) -> Result<()> {
    let mut w = create(path)?;
    m.write_csv(&mut w, header)?;
    w.flush()?;
    Ok(())
}

fn grid_json(f: &GridFn) -> Value {
    json!({"lo": f.grid.lo, "hi": f.grid.hi, "shape": f.grid.shape})
}

fn cartesian_body(args: &CartesianBodyArgs) -> Result<(InstanceSpec, ConeModel, GroupAction, Arc<AffineSphere>, Body)> {
    let spec = read_instance(&args.instance)?;
    let (cone, action) = spec.build()?;
    let v = match &args.v {
        Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
        Some(_) => return Err(conevex::Error::Invalid("--v needs three components".into()).into()),
        None => action.coboundary_vector().map_or([0.0; 3], |v| [v[0], v[1], v[2]]),
    };
    let (sphere, body) = match &args.support {
        Some(path) => {
            let s = read_gridfn(path)?;
            let sphere = Arc::new(AffineSphere::closed_form_on(&cone, s.grid.clone())?);
            let body = Body::new(s, sphere.clone())?;
            (sphere, body)
        }
        None => {
            let sphere = Arc::new(AffineSphere::closed_form(&cone, args.grid)?);
            let body = Body::sigma_offset(sphere.clone(), v, args.offset.unwrap_or(0.5))?;
            (sphere, body)
        }
    };
    Ok((spec, cone, action, sphere, body))
}

fn tau_setup(cone: &ConeModel, action: &GroupAction, n: usize) -> Result<(Arc<TorusGrid>, MaximalDomain)> {
    let chart = LogChart::from_action(cone, action)?;
    let torus = Arc::new(TorusGrid::new(chart, n)?);
    let sphere = AffineSphere::closed_form(cone, 33)?;
    let dmax = maximal_domain(action, &sphere, None)?;
    Ok((torus, dmax))
}

fn tau_body(args: &TauBodyArgs) -> Result<(InstanceSpec, GroupAction, Arc<TorusGrid>, MaximalDomain, TauBody)> {
    let spec = read_instance(&args.instance)?;
    let (cone, action) = spec.build()?;
    let s = args.support.as_deref().map(read_gridfn).transpose()?;
    let n = s.as_ref().map_or(args.grid, |s| s.grid.shape[0]);
    let (torus, dmax) = tau_setup(&cone, &action, n)?;
    let v = dmax.coboundary_vector().ok_or_else(|| conevex::Error::Invalid("instance is not a coboundary".into()))?;
    let body = match s {
        Some(s) => TauBody::from_support_gridfn(torus.clone(), v, &s)?,
        None => TauBody::sigma_offset(torus.clone(), v, args.offset.unwrap_or(0.5)),
    };
    Ok((spec, action, torus, dmax, body))
}

fn parse_vec(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| anyhow!("bad number '{x}': {e}"))).collect()
}

fn cmd_instance(kind: InstanceKind, d: usize, eigenvalues: &[String], v: &[f64], word_bound: usize, out: Option<&Path>) -> Result<()> {
    let (cone, action) = match kind {
        InstanceKind::Quadratic => (ConeModel::quadratic(d), GroupAction::trivial(d)),
        InstanceKind::SimplicialLatticeCoboundary => {
            if d != 2 {
                return Err(conevex::Error::Invalid("lattice instances are built for d = 2".into()).into());
            }
            let eigs: Vec<Vec<f64>> = if eigenvalues.is_empty() {
                default_lattice_eigenvalues()
            } else {
                // clap splits on commas; regroup into vectors of length d+1.
                let flat: Vec<f64> = eigenvalues.iter().map(|s| parse_vec(s)).collect::<Result<Vec<_>>>()?.concat();
                if flat.len() % (d + 1) != 0 {
                    return Err(conevex::Error::Invalid(format!("eigenvalue vectors need {} entries", d + 1)).into());
                }
                flat.chunks(d + 1).map(|c| c.to_vec()).collect()
            };
            simplicial_lattice_instance(&eigs, v, word_bound)?
        }
    };
    let spec = InstanceSpec::from_parts(&cone, &action);
    let h = header("instance", &spec, None, Value::Null);
    let payload = serde_json::to_value(&spec)?;
    match out {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{h}")?;
            writeln!(w, "{}", serde_json::to_string(&payload)?)?;
            w.flush()?;
        }
        None => print_json(&h, &payload),
    }
    Ok(())
}

fn cmd_sphere(instance: &Path, n: usize, closed_form: bool, out: &Path, diagnostics: Option<&Path>) -> Result<()> {
    let spec = read_instance(instance)?;
    let (cone, _) = spec.build()?;
    let start = Instant::now();
    let sphere = if closed_form { AffineSphere::closed_form(&cone, n)? } else { solve_affine_sphere(&cone, &SphereConfig::new(n))? };
    eprintln!("sphere: {} nodes in {:.2} s", sphere.grid().len(), start.elapsed().as_secs_f64());
    let h = header("sphere", &spec, None, grid_json(&sphere.omega));
    write_gridfn(out, &sphere.omega, &h)?;
    let dh = header("sphere-diagnostics", &spec, None, grid_json(&sphere.omega));
    let payload = serde_json::to_value(&sphere.diagnostics)?;
    match diagnostics {
        Some(p) => write_json(p, &dh, &payload)?,
        None => print_json(&dh, &payload),
    }
    Ok(())
}

fn cmd_steiner(args: &CartesianBodyArgs, eps: Option<&[f64]>, collar: f64, out: &Path, measures_dir: Option<&Path>) -> Result<()> {
    let (spec, _, _, _, body) = cartesian_body(args)?;
    let eps = eps.unwrap_or(&DEFAULT_STEINER_EPS);
    let coeffs = steiner_measures(&body, eps)?;
    let h = header("steiner", &spec, None, grid_json(&body.support));
    let cells = body.collar_nodes(collar);
    let totals = coeffs.masses(&cells)?;
    let payload = json!({
        "eps": coeffs.eps,
        "condition": coeffs.condition,
        "collar": collar,
        "cells": cells.len(),
        "totals": totals.iter().map(|t| fmt17(*t)).collect::<Vec<_>>(),
        "sigma_volume": fmt17(sigma_measure(&body).mass_of(&cells)?),
    });
    write_json(out, &h, &payload)?;
    if let Some(dir) = measures_dir {
        for (i, m) in coeffs.measures.iter().enumerate() {
            let mh = header(&format!("steiner-measure-{i}"), &spec, None, grid_json(&body.support));
            write_measure(&dir.join(format!("S{i}.csv")), m, &mh)?;
        }
    }
    Ok(())
}

fn cmd_curvature(args: &CartesianBodyArgs, out: &Path, radii: Option<&Path>) -> Result<()> {
    let (spec, _, _, _, body) = cartesian_body(args)?;
    let phi = c_curvature(&body)?;
    write_gridfn(out, &phi, &header("curvature", &spec, None, grid_json(&phi)))?;
    if let Some(p) = radii {
        let mut w = create(p)?;
        writeln!(w, "{}", header("radii", &spec, None, grid_json(&phi)))?;
        writeln!(w, "node,y0,y1,k1,k2,r1,r2")?;
        for s in shape_operator_radii(&body)? {
            let y = body.grid().point2(s.node);
            writeln!(w, "{},{},{},{},{},{},{}", s.node, fmt17(y[0]), fmt17(y[1]), fmt17(s.curvatures[0]), fmt17(s.curvatures[1]), fmt17(s.radii[0]), fmt17(s.radii[1]))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_covolume(args: &TauBodyArgs, mc_samples: usize, seed: u64, path_nodes: usize, out: &Path, area_out: Option<&Path>) -> Result<()> {
    let (spec, action, torus, dmax, body) = tau_body(args)?;
    let rep = if mc_samples > 0 { covolume_with_mc(&body, &dmax, &action, path_nodes, mc_samples, seed)? } else { covolume(&body, &dmax, path_nodes)? };
    let grid = json!({"torus": torus.n});
    let seed = (mc_samples > 0).then_some(seed);
    let mut payload = serde_json::to_value(&rep)?;
    payload["value"] = json!(fmt17(rep.value));
    write_json(out, &header("covolume", &spec, seed, grid.clone()), &payload)?;
    if let Some(p) = area_out {
        write_measure(p, &body.area_measure(), &header("area-measure", &spec, None, grid))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_invariant(args: &CartesianBodyArgs, check: bool, samples: usize, dl_sample: usize, window: f64, seed: u64, out: Option<&Path>) -> Result<()> {
    let (spec, cone, action, sphere, body) = cartesian_body(args)?;
    let chart = LogChart::from_action(&cone, &action)?;
    let cells = fundamental_cells(&sphere, &chart);
    let mut payload = json!({"fundamental_cells": cells.len()});
    if check {
        payload["equivariance"] = serde_json::to_value(equivariance_residual(&body.support, &sphere, &action, &cells, samples, seed)?)?;
    }
    if body.is_c2_plus() {
        let mut rows = Vec::new();
        for (k, elem) in action.cached.iter().enumerate().filter(|(_, e)| e.word.len() == 1) {
            let (a, b) = area_invariance(&body, elem, &cells)?;
            rows.push(json!({"element": k, "word": format!("{:?}", elem.word), "area": fmt17(a), "image_area": fmt17(b)}));
        }
        payload["area_invariance"] = Value::Array(rows);
    }
    if dl_sample > 0 {
        let dmax = maximal_domain(&action, &sphere, None)?;
        let mut rep = dl_covering(&action, &dmax, &cone, [0.0, 0.0], dl_sample, window, seed)?;
        rep.failures.truncate(20);
        payload["dl_covering"] = serde_json::to_value(rep)?;
        payload["word_bound"] = json!(action.word_bound);
    }
    let h = header("invariant", &spec, Some(seed), grid_json(&body.support));
    match out {
        Some(p) => write_json(p, &h, &payload)?,
        None => print_json(&h, &payload),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_minkowski(
    instance: &Path,
    measure: Option<&Path>,
    sigma_multiple: Option<f64>,
    n: usize,
    mode: &str,
    init: Option<f64>,
    max_iter: usize,
    out: &Path,
    trace_path: Option<&Path>,
    residual_path: Option<&Path>,
) -> Result<()> {
    let spec = read_instance(instance)?;
    let (cone, action) = spec.build()?;
    let mode: SolveMode = mode.parse()?;
    let mu_file = measure
        .map(|p| -> Result<DiscreteMeasure> {
            let f = File::open(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(DiscreteMeasure::read_csv(BufReader::new(f))?.0)
        })
        .transpose()?;
    let n = mu_file.as_ref().map_or(n, |m| m.grid.shape[0]);
    let (torus, dmax) = tau_setup(&cone, &action, n)?;
    let mu = match (mu_file, sigma_multiple) {
        (Some(m), _) => m,
        (None, Some(c)) => torus.sigma_measure().scaled(c),
        (None, None) => return Err(conevex::Error::Invalid("give --measure or --sigma-multiple".into()).into()),
    };
    let config = MinkowskiConfig { mode, initial_offset: init, max_iter, ..Default::default() };
    let problem = MinkowskiProblem::new(mu.clone(), torus.clone(), dmax.clone(), config)?;
    let start = Instant::now();
    let (body, trace) = solve_minkowski(&problem)?;
    eprintln!("minkowski: {} iterations in {:.2} s", trace.steps.len(), start.elapsed().as_secs_f64());
    let grid = json!({"torus": n});
    write_gridfn(out, &body.support_gridfn(), &header("tau-support", &spec, None, grid.clone()))?;
    let res = residual(&body, &mu)?;
    let guard = boundary_contact_guard(&body, &dmax)?;
    if guard.flagged {
        eprintln!("minkowski: cosmological time {:.3e} is below {:.3e}; the body may touch ∂D_τ", guard.t_min, guard.threshold);
    }
    if let Some(p) = trace_path {
        let payload = json!({
            "mode": trace.mode,
            "converged": trace.converged,
            "steps": trace.steps,
            "residual_total": fmt17(res.total),
            "residual_tv": fmt17(res.total_variation),
            "contact": guard,
        });
        write_json(p, &header("minkowski-trace", &spec, None, grid.clone()), &payload)?;
    }
    if let Some(p) = residual_path {
        let mut w = create(p)?;
        writeln!(w, "{}", header("minkowski-residual", &spec, None, grid))?;
        writeln!(w, "cell,theta0,theta1,residual")?;
        for (j, r) in res.per_cell.iter().enumerate() {
            let t = torus.theta[j];
            writeln!(w, "{j},{},{},{}", fmt17(t[0]), fmt17(t[1]), fmt17(*r))?;
        }
        w.flush()?;
    }
    if !trace.converged {
        return Err(conevex::Error::NonConvergence(format!("stopped after {} iterations", trace.steps.len())).into());
    }
    Ok(())
}

const REPORT_INPUTS: [(&str, &str); 4] = [
    ("sphere-diagnostics", "sphere --diagnostics <file>"),
    ("steiner", "steiner --out <file>"),
    ("minkowski-trace", "minkowski --trace <file>"),
    ("minkowski-residual", "minkowski --residual <file>"),
];

fn first_line(path: &Path) -> Option<Value> {
    let f = File::open(path).ok()?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).ok()?;
    serde_json::from_str(&line).ok()
}

fn cmd_report(dir: &Path, out: &Path) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    entries.sort();
    let mut written = Vec::new();
    for path in &entries {
        let Some(h) = first_line(path) else { continue };
        let kind = h["kind"].as_str().unwrap_or_default().to_string();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        let mut rows: Vec<String> = Vec::new();
        let columns;
        match kind.as_str() {
            "sphere-diagnostics" => {
                let (_, p) = read_json(path)?;
                columns = "iteration,residual_norm,update_norm,step_length";
                let get = |k: &str, i: usize| p[k].get(i).and_then(Value::as_f64).map_or(String::new(), fmt17);
                let count = p["residual_norms"].as_array().map_or(0, |a| a.len());
                for i in 0..count {
                    rows.push(format!("{i},{},{},{}", get("residual_norms", i), get("update_norms", i), get("step_lengths", i)));
                }
            }
            "steiner" => {
                let (_, p) = read_json(path)?;
                columns = "coefficient,total_mass";
                for (i, t) in p["totals"].as_array().into_iter().flatten().enumerate() {
                    rows.push(format!("{i},{}", t.as_str().unwrap_or_default()));
                }
            }
            "minkowski-trace" => {
                let (_, p) = read_json(path)?;
                columns = "iteration,l_value,residual,step";
                for s in p["steps"].as_array().into_iter().flatten() {
                    let f = |k: &str| s[k].as_f64().map_or(String::new(), fmt17);
                    rows.push(format!("{},{},{},{}", s["iteration"], f("l_value"), f("residual"), f("step")));
                }
            }
            "minkowski-residual" => {
                columns = "cell,theta0,theta1,residual";
                let text = fs::read_to_string(path)?;
                rows.extend(text.lines().skip(2).map(str::to_string));
            }
            _ => continue,
        }
        let target = out.join(format!("{kind}__{stem}.csv"));
        let mut w = create(&target)?;
        let mut hh = h.clone();
        hh["kind"] = json!(format!("report-{kind}"));
        hh["source"] = json!(path.file_name().and_then(|s| s.to_str()));
        writeln!(w, "{hh}")?;
        writeln!(w, "{columns}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        written.push(target);
    }
    if written.is_empty() {
        let expected: Vec<String> = REPORT_INPUTS.iter().map(|(k, how)| format!("  {k}: produced by `conevex {how}`")).collect();
        return Err(conevex::Error::Invalid(format!("no report inputs in {}; expected files:\n{}", dir.display(), expected.join("\n"))).into());
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Instance { kind, d, eigenvalues, v, word_bound, out } => cmd_instance(kind, d, &eigenvalues, &v, word_bound, out.as_deref()),
        Command::Sphere { instance, grid, closed_form, out, diagnostics } => cmd_sphere(&instance, grid, closed_form, &out, diagnostics.as_deref()),
        Command::Steiner { body, eps, collar, out, measures_dir } => cmd_steiner(&body, eps.as_deref(), collar, &out, measures_dir.as_deref()),
        Command::Curvature { body, out, radii } => cmd_curvature(&body, &out, radii.as_deref()),
        Command::Covolume { body, mc_samples, seed, path_nodes, out, area_out } => cmd_covolume(&body, mc_samples, seed, path_nodes, &out, area_out.as_deref()),
        Command::Invariant { body, check_equivariance, samples, dl_sample, window, seed, out } => cmd_invariant(&body, check_equivariance, samples, dl_sample, window, seed, out.as_deref()),
        Command::Minkowski { instance, measure, sigma_multiple, grid, mode, init, max_iter, out, trace, residual } => {
            cmd_minkowski(&instance, measure.as_deref(), sigma_multiple, grid, &mode, init, max_iter, &out, trace.as_deref(), residual.as_deref())
        }
        Command::Report { dir, out } => cmd_report(&dir, &out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<conevex::Error>()) {
        Some(conevex::Error::NonConvergence(_)) | Some(conevex::Error::Singular(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(t) = std::env::var("CONEVEX_THREADS") {
        match t.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: CONEVEX_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
