use std::path::PathBuf;

use clap::{Args, Subcommand};
use serde_json::json;

use algpaths::comorph::ProbeParams;
use algpaths::expr::parse;
use algpaths::numkernel::flow;
use algpaths::poisson::{complete_map_probe, cotangent_lift, poisson_map_residual, PoissonError, POISSON_MAP_TOL};

use crate::commands::{comorphism_json, horizon, load, numeric, seed_points, DEFAULT_RANDOM_SEEDS, DEFAULT_SAMPLES};
use crate::error::{usage, CliError, CliResult};
use crate::output::{emit_csv, number_list_of, print_json, to_value};
use crate::workspace::{SAMPLE_RADIUS, SPOT_CHECK_SAMPLES};
use crate::{ConfigArg, NumericArgs, SeedPoints};

#[derive(Subcommand, Debug)]
pub enum PoissonCommand {
    /// Residual of `Dφ Π_X Dφᵀ = Π_Y ∘ φ` at random points.
    CheckMap {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        map: String,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        #[arg(long, default_value_t = POISSON_MAP_TOL)]
        tol: f64,
    },
    /// Flow of the Hamiltonian vector field `Π ∇f`.
    Flow(FlowArgs),
    /// Cotangent lift `T*φ` of a Poisson map as a comorphism.
    Lift {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        map: String,
    },
    /// Compare Hamiltonian-flow and cotangent-lift completeness probes.
    Probe(PoissonProbeArgs),
}

#[derive(Args, Debug)]
pub struct FlowArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub manifold: String,
    #[arg(long, allow_hyphen_values = true)]
    pub hamiltonian: String,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[command(flatten)]
    pub numeric: NumericArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PoissonProbeArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub map: String,
    /// Test function on the target, one flag per function.
    #[arg(long = "function", required = true, allow_hyphen_values = true)]
    pub functions: Vec<String>,
    #[command(flatten)]
    pub points: SeedPoints,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[command(flatten)]
    pub numeric: NumericArgs,
}

pub fn run(cmd: PoissonCommand, seed: u64) -> CliResult<()> {
    match cmd {
        PoissonCommand::CheckMap {
            config,
            map,
            samples,
            radius,
            tol,
        } => {
            let ws = load(&config, seed, false)?;
            let m = ws.poisson_map(&map)?;
            let (px, py) = (ws.poisson_manifold(&m.source)?, ws.poisson_manifold(&m.target)?);
            let samples = samples.or(ws.params.samples).unwrap_or(DEFAULT_SAMPLES);
            let pts = px.sample_domain(seed, samples, radius).map_err(usage)?;
            let (residual, at) = poisson_map_residual(&m.phi, px, py, &pts).map_err(usage)?;
            let pass = residual <= tol;
            let report = json!({
                "map": map,
                "seed": seed,
                "samples": samples,
                "radius": radius,
                "tolerance": tol,
                "residual": residual,
                "witness": if pass { None } else { at },
                "pass": pass,
            });
            if !pass {
                return Err(CliError::failure(format!("not a Poisson map: residual {residual:e}"), report));
            }
            print_json(&report);
            Ok(())
        }
        PoissonCommand::Flow(a) => {
            let ws = load(&a.config, seed, true)?;
            let p = ws.poisson_manifold(&a.manifold)?;
            let f = parse(&a.hamiltonian, p.vars()).map_err(|e| usage(format!("--hamiltonian: {e}")))?;
            let x0 = number_list_of(&a.x0, p.dim(), "--x0")?;
            let (step, bound) = numeric(&ws, &a.numeric);
            let t = horizon(&ws, a.horizon);
            let tr = flow(&p.hamiltonian_vf(&f), &x0, (0.0, t), step, bound).map_err(usage)?;
            let report = json!({
                "manifold": a.manifold,
                "hamiltonian": a.hamiltonian,
                "x0": x0,
                "horizon": t,
                "step": step,
                "bound": bound,
                "seed": seed,
                "status": to_value(&tr.status),
                "end": tr.last(),
            });
            emit_csv(&tr.to_csv(), a.out.as_deref(), &report)?;
            if !tr.status.is_completed() {
                // The CSV status line (or the printed report) already carries the
                // witness.
                return Err(CliError::failure(format!("flow stopped: {}", tr.status), serde_json::Value::Null));
            }
            Ok(())
        }
        PoissonCommand::Lift { config, map } => {
            let ws = load(&config, seed, true)?;
            let m = ws.poisson_map(&map)?;
            let (px, py) = (ws.poisson_manifold(&m.source)?, ws.poisson_manifold(&m.target)?);
            let pts = px.sample_domain(seed, SPOT_CHECK_SAMPLES, SAMPLE_RADIUS).map_err(usage)?;
            match cotangent_lift(&m.phi, px, py, &pts) {
                Ok(c) => {
                    let name = format!("T*{map}");
                    let out = comorphism_json(&name, &c, Some(format!("T*{}", m.source)), Some(format!("T*{}", m.target)));
                    print_json(&json!({ "comorphism": out, "map": map, "seed": seed }));
                    Ok(())
                }
                Err(PoissonError::NotPoisson { residual, point }) => Err(CliError::failure(
                    format!("not a Poisson map: residual {residual:e}"),
                    json!({ "map": map, "seed": seed, "residual": residual, "witness": point }),
                )),
                Err(e) => Err(usage(e)),
            }
        }
        PoissonCommand::Probe(a) => {
            let ws = load(&a.config, seed, true)?;
            let m = ws.poisson_map(&a.map)?;
            let (px, py) = (ws.poisson_manifold(&m.source)?, ws.poisson_manifold(&m.target)?);
            let fs = a
                .functions
                .iter()
                .map(|f| parse(f, py.vars()).map_err(|e| usage(format!("--function {f:?}: {e}"))))
                .collect::<CliResult<Vec<_>>>()?;
            let (step, bound) = numeric(&ws, &a.numeric);
            let params = ProbeParams {
                horizon: horizon(&ws, a.horizon),
                bound,
                step,
            };
            let seeds = seed_points(&a.points, px.dim(), DEFAULT_RANDOM_SEEDS, |k, r| px.sample_domain(seed, k, r).ok())?;
            let checks = px.sample_domain(seed, SPOT_CHECK_SAMPLES, SAMPLE_RADIUS).map_err(usage)?;
            let rep = complete_map_probe(&m.phi, px, py, &fs, &params, &seeds, None, &checks).map_err(usage)?;
            let report = json!({
                "map": a.map,
                "seed": seed,
                "seed_points": seeds,
                "params": to_value(&params),
                "report": to_value(&rep),
            });
            if rep.verdict == algpaths::comorph::Verdict::IncompleteWitness {
                return Err(CliError::failure("incomplete: some flow line escaped", report));
            }
            print_json(&report);
            Ok(())
        }
    }
}
