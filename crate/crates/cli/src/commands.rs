use std::sync::Arc;

use serde_json::{json, Value};

use algpaths::algebroid::{LieAlgebroid, SectionTD};
use algpaths::apath::{develop as develop_path, integrate_apath, log_derivative, AHomotopy, APath, MatrixPath, PathError};
use algpaths::comorph::{Comorphism, HomotopyLiftError, LiftError, LiftOptions, ProbeParams};
use algpaths::ehresmann::{circle_loop, holonomy as transport, ConnectionError};
use algpaths::numkernel::{DEFAULT_BOUND, DEFAULT_STEP};

use crate::error::{usage, CliError, CliResult};
use crate::output::{emit_csv, number_list_of, point_list, print_json, read_file, to_value};
use crate::workspace::{load_workspace, LoadOptions, Workspace, SAMPLE_RADIUS, SPOT_CHECK_SAMPLES};
use crate::{
    CheckAlgebroidArgs, ComposeArgs, ConfigArg, DevelopArgs, HolonomyArgs, IntegratePathArgs, LiftHomotopyArgs,
    LiftPathArgs, LogderivArgs, NumericArgs, ProbeArgs, SeedPoints,
};

pub const DEFAULT_HORIZON: f64 = 10.0;
pub const DEFAULT_GRID: usize = 1000;
pub const DEFAULT_SAMPLES: usize = 100;
pub const DEFAULT_RANDOM_SEEDS: usize = 8;

pub fn load(cfg: &ConfigArg, seed: u64, spot_checks: bool) -> CliResult<Workspace> {
    load_workspace(&cfg.config, LoadOptions { seed, spot_checks })
}

/// Step and bound: flag, then config, then library default.
pub fn numeric(ws: &Workspace, n: &NumericArgs) -> (f64, f64) {
    (
        n.step.or(ws.params.step).unwrap_or(DEFAULT_STEP),
        n.bound.or(ws.params.bound).unwrap_or(DEFAULT_BOUND),
    )
}

pub fn horizon(ws: &Workspace, flag: Option<f64>) -> f64 {
    flag.or(ws.params.horizon).unwrap_or(DEFAULT_HORIZON)
}

pub fn grid(ws: &Workspace, flag: Option<usize>) -> usize {
    flag.or(ws.params.grid).unwrap_or(DEFAULT_GRID)
}

pub fn seed_points(
    pts: &SeedPoints,
    dim: usize,
    default_count: usize,
    sample: impl FnOnce(usize, f64) -> Option<Vec<Vec<f64>>>,
) -> CliResult<Vec<Vec<f64>>> {
    match &pts.seeds {
        Some(s) => point_list(s, dim),
        None => sample(pts.random_seeds.unwrap_or(default_count), pts.radius)
            .ok_or_else(|| CliError::usage("could not sample seed points in the domain")),
    }
}

fn section_for(alg: &LieAlgebroid, comps: &[String]) -> CliResult<SectionTD> {
    if comps.len() != alg.rank() {
        return Err(CliError::usage(format!(
            "section needs {} components (one --section each), got {}",
            alg.rank(),
            comps.len()
        )));
    }
    let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
    SectionTD::parse(alg.vars(), &refs).map_err(|e| usage(format!("section: {e}")))
}

/// A Lie algebra sits over a point, so an empty list stands for its single
/// dummy coordinate.
fn point_in(alg: &LieAlgebroid, s: &str, what: &str) -> CliResult<Vec<f64>> {
    if alg.is_over_point() && s.trim().is_empty() {
        return Ok(vec![0.0; alg.base_dim()]);
    }
    number_list_of(s, alg.base_dim(), what)
}

/// Name under which `a` is registered, if any.
pub fn algebroid_name(ws: &Workspace, a: &Arc<LieAlgebroid>) -> Option<String> {
    ws.algebroids.iter().find(|(_, b)| Arc::ptr_eq(a, b)).map(|(n, _)| n.clone())
}

pub fn comorphism_json(name: &str, c: &Comorphism, source: Option<String>, target: Option<String>) -> Value {
    json!({
        "name": name,
        "source": source,
        "target": target,
        "phi": c.phi().display_components(),
        "M": c.fiber_map().display_entries(),
    })
}

fn lift_failure(e: LiftError, mut report: Value) -> CliError {
    match e {
        LiftError::Failure {
            status,
            last_time,
            last_point,
        } => {
            report["verdict"] = json!("lift_failed");
            report["status"] = to_value(&status);
            report["last_time"] = json!(last_time);
            report["last_point"] = json!(last_point);
            CliError::failure(format!("lift failed: {status}"), report)
        }
        LiftError::Setup(e) => usage(e),
    }
}

pub fn check_algebroid(a: CheckAlgebroidArgs, seed: u64) -> CliResult<()> {
    let ws = load(&a.config, seed, false)?;
    let samples = a.samples.or(ws.params.samples).unwrap_or(DEFAULT_SAMPLES);
    let names: Vec<String> = match &a.name {
        Some(n) => {
            ws.algebroid(n)?;
            vec![n.clone()]
        }
        None => ws.algebroids.keys().cloned().collect(),
    };
    let mut results = Vec::new();
    let mut pass = true;
    for name in names {
        let alg = ws.algebroid(&name)?;
        let pts = alg.sample_domain(seed, samples, a.radius).map_err(usage)?;
        let r = alg.check_axioms(&pts).map_err(usage)?;
        let ok = r.max() <= a.tol;
        pass &= ok;
        results.push(json!({
            "name": name,
            "anchor_morphism": r.anchor_morphism,
            "jacobi": r.jacobi,
            "pass": ok,
        }));
    }
    let report = json!({
        "seed": seed,
        "samples": samples,
        "radius": a.radius,
        "tolerance": a.tol,
        "algebroids": results,
        "pass": pass,
    });
    if !pass {
        return Err(CliError::failure("axiom residuals exceed the tolerance", report));
    }
    print_json(&report);
    Ok(())
}

pub fn integrate_path(a: IntegratePathArgs, seed: u64) -> CliResult<()> {
    let ws = load(&a.config, seed, true)?;
    let alg = ws.algebroid(&a.algebroid)?.clone();
    let s = section_for(&alg, &a.section)?;
    let x0 = point_in(&alg, &a.x0, "--x0")?;
    let n = grid(&ws, a.grid);
    let mut report = json!({
        "algebroid": a.algebroid,
        "grid": n,
        "step": 1.0 / n as f64,
        "x0": x0,
        "seed": seed,
    });
    match integrate_apath(alg, &s, &x0, n) {
        Ok(g) => {
            report["target"] = json!(g.target().as_slice());
            report["admissibility_residual"] = json!(g.admissibility_residual().map_err(usage)?);
            emit_csv(&g.to_csv(), a.out.as_deref(), &report)
        }
        Err(PathError::Incomplete { status, partial_base }) => {
            report["status"] = to_value(&status);
            report["last_point"] = json!(partial_base.last());
            Err(CliError::failure(format!("integration stopped: {status}"), report))
        }
        Err(e) => Err(usage(e)),
    }
}

fn lift_options(ws: &Workspace, n: &NumericArgs, interpolation: crate::InterpolationArg) -> LiftOptions {
    let (step, bound) = numeric(ws, n);
    LiftOptions {
        step,
        bound,
        interpolation: interpolation.into(),
    }
}

pub fn lift_path(a: LiftPathArgs, seed: u64) -> CliResult<()> {
    let ws = load(&a.config, seed, true)?;
    let c = ws.comorphism(&a.comorphism)?;
    let g = APath::from_csv(c.target().clone(), &read_file(&a.path)?).map_err(|e| usage(format!("{}: {e}", a.path.display())))?;
    let x0 = point_in(c.source(), &a.x0, "--x0")?;
    let opts = lift_options(&ws, &a.numeric, a.interpolation);
    let mut report = json!({
        "comorphism": a.comorphism,
        "grid": g.intervals(),
        "x0": x0,
        "options": to_value(&opts),
        "seed": seed,
    });
    let lifted = c.lift_path(&g, &x0, &opts).map_err(|e| lift_failure(e, report.clone()))?;
    report["target"] = json!(lifted.path.target().as_slice());
    report["projection_error"] = json!(lifted.projection_error);
    if a.uniqueness {
        let u = c.lift_uniqueness_check(&g, &x0, &opts).map_err(usage)?;
        report["uniqueness"] = to_value(&u);
    }
    emit_csv(&lifted.path.to_csv(), a.out.as_deref(), &report)
}

pub fn lift_homotopy(a: LiftHomotopyArgs, seed: u64) -> CliResult<()> {
    let ws = load(&a.config, seed, true)?;
    let c = ws.comorphism(&a.comorphism)?;
    let hb = AHomotopy::from_csv(c.target().clone(), &read_file(&a.homotopy)?)
        .map_err(|e| usage(format!("{}: {e}", a.homotopy.display())))?;
    let x0 = point_in(c.source(), &a.x0, "--x0")?;
    let opts = lift_options(&ws, &a.numeric, a.interpolation);
    let mut report = json!({
        "comorphism": a.comorphism,
        "t_intervals": hb.t_intervals(),
        "s_intervals": hb.s_intervals(),
        "x0": x0,
        "options": to_value(&opts),
        "seed": seed,
    });
    let lifted = match c.lift_homotopy(&hb, &x0, &opts) {
        Ok(h) => h,
        Err(HomotopyLiftError::Slice { s, source }) => {
            report["slice"] = json!(s);
            return Err(lift_failure(*source, report));
        }
        Err(HomotopyLiftError::Input(e)) => return Err(usage(e)),
    };
    let r = lifted.homotopy_residual().map_err(usage)?;
    report["residual"] = to_value(&r);
    emit_csv(&lifted.to_csv(), a.out.as_deref(), &report)
}

pub fn completeness_probe(a: ProbeArgs, seed: u64) -> CliResult<()> {
    let ws = load(&a.config, seed, true)?;
    let c = ws.comorphism(&a.comorphism)?;
    let s = section_for(c.target(), &a.section)?;
    let (step, bound) = numeric(&ws, &a.numeric);
    let params = ProbeParams {
        horizon: horizon(&ws, a.horizon),
        bound,
        step,
    };
    let seeds = seed_points(&a.points, c.source().base_dim(), DEFAULT_RANDOM_SEEDS, |k, r| {
        c.source().sample_domain(seed, k, r).ok()
    })?;
    let probe = c.completeness_probe(&s, &params, &seeds).map_err(usage)?;
    let report = json!({
        "comorphism": a.comorphism,
        "section": a.section,
        "seed": seed,
        "seed_points": seeds,
        "params": to_value(&params),
        "probe": to_value(&probe),
    });
    if probe.is_incomplete() {
        return Err(CliError::failure(format!("incomplete: {}", probe.summary), report));
    }
    print_json(&report);
    Ok(())
}

pub fn compose(a: ComposeArgs, seed: u64) -> CliResult<()> {
    let ws = load(&a.config, seed, true)?;
    let c1 = ws.comorphism(&a.first)?;
    let c2 = ws.comorphism(&a.second)?;
    let c12 = c1.compose(c2).map_err(usage)?;
    let pts = c12.source().sample_domain(seed, SPOT_CHECK_SAMPLES, SAMPLE_RADIUS).map_err(usage)?;
    let residual = c12.anchor_compat_residual(&pts).map_err(usage)?;
    let name = a.name.unwrap_or_else(|| format!("{}*{}", a.first, a.second));
    let out = comorphism_json(&name, &c12, algebroid_name(&ws, c12.source()), algebroid_name(&ws, c12.target()));
    print_json(&json!({
        "comorphism": out,
        "first": a.first,
        "second": a.second,
        "seed": seed,
        "anchor_compat_residual": residual,
    }));
    Ok(())
}

pub fn holonomy(a: HolonomyArgs, seed: u64) -> CliResult<()> {
    let ws = load(&a.config, seed, true)?;
    let c = ws.comorphism(&a.comorphism)?;
    let n = grid(&ws, a.grid);
    let g = match (&a.path, &a.circle) {
        (Some(p), None) => APath::from_csv(c.target().clone(), &read_file(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        (None, Some(spec)) => {
            let v = number_list_of(spec, 3, "--circle")?;
            if c.target().base_dim() != 2 {
                return Err(CliError::usage("--circle needs a two-dimensional target base"));
            }
            circle_loop(c.target().clone(), [v[0], v[1]], v[2], a.windings, n).map_err(usage)?
        }
        _ => return Err(CliError::usage("give one of --path or --circle")),
    };
    let x0 = point_in(c.source(), &a.x0, "--x0")?;
    let opts = lift_options(&ws, &a.numeric, crate::InterpolationArg::Cubic);
    let report = json!({
        "comorphism": a.comorphism,
        "grid": g.intervals(),
        "windings": a.windings,
        "x0": x0,
        "options": to_value(&opts),
        "seed": seed,
    });
    match transport(c, &g, &x0, &opts) {
        Ok((h, lifted)) => {
            let mut report = report;
            report["holonomy"] = to_value(&h);
            if let Some(out) = &a.out {
                emit_csv(&lifted.to_csv(), Some(out), &report)
            } else {
                print_json(&report);
                Ok(())
            }
        }
        Err(ConnectionError::Lift(e)) => Err(lift_failure(e, report)),
        Err(e) => Err(usage(e)),
    }
}

pub fn develop(a: DevelopArgs, seed: u64) -> CliResult<()> {
    let ws = load(&a.config, seed, true)?;
    let alg = ws.algebroid(&a.algebroid)?;
    let basis = ws.matrix_basis(&a.algebroid)?;
    let g = APath::from_csv(alg.clone(), &read_file(&a.path)?).map_err(|e| usage(format!("{}: {e}", a.path.display())))?;
    let gamma = develop_path(basis, &g).map_err(usage)?;
    let last = gamma.last();
    let report = json!({
        "algebroid": a.algebroid,
        "grid": gamma.intervals(),
        "end": (0..last.nrows()).map(|i| last.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
    });
    emit_csv(&gamma.to_csv(), a.out.as_deref(), &report)
}

pub fn logderiv(a: LogderivArgs, seed: u64) -> CliResult<()> {
    let ws = load(&a.config, seed, true)?;
    let alg = ws.algebroid(&a.algebroid)?;
    let basis = ws.matrix_basis(&a.algebroid)?;
    let m = basis[0].nrows();
    let gamma = MatrixPath::from_csv(m, &read_file(&a.matrix_path)?).map_err(|e| usage(format!("{}: {e}", a.matrix_path.display())))?;
    let report = json!({ "algebroid": a.algebroid, "grid": gamma.intervals() });
    match log_derivative(&gamma, basis, alg.clone()) {
        Ok(g) => emit_csv(&g.to_csv(), a.out.as_deref(), &report),
        Err(e @ (PathError::OutsideSpan { .. } | PathError::Singular(_))) => {
            let mut report = report;
            report["error"] = json!(e.to_string());
            if let PathError::OutsideSpan { index, residual } = e {
                report["index"] = json!(index);
                report["residual"] = json!(residual);
            }
            Err(CliError::failure(e.to_string(), report))
        }
        Err(e) => Err(usage(e)),
    }
}

