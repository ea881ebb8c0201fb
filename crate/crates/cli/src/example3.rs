//! Subcommands for the rotation-holonomy example: holonomy `e^{2πiν(h)}`
//! around the circles of `R² × C × R`.

use std::f64::consts::TAU;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use serde_json::json;

use algpaths::comorph::LiftOptions;
use algpaths::ehresmann::{density_scan, sheet_count, sweep_csv, ExampleConnection, GammaElement, DEFAULT_K_MAX};
use algpaths::expr::parse_constant;
use algpaths::numkernel::{DEFAULT_BOUND, DEFAULT_STEP};

use crate::error::{usage, CliError, CliResult};
use crate::output::{emit_csv, number_list, number_list_of, print_json, to_value};

#[derive(Subcommand, Debug)]
pub enum Example3Command {
    /// Number of sheets of the leaf through a level with rotation number ν.
    Sheets {
        /// ν, e.g. `1/3` or `sqrt(2) - 1`.
        #[arg(long, allow_hyphen_values = true)]
        nu: String,
        #[arg(long, default_value_t = DEFAULT_K_MAX)]
        k_max: u64,
        /// Print a JSON object instead of the bare count.
        #[arg(long)]
        json: bool,
    },
    /// Torus-cell coverage and strand count of an orbit.
    Density {
        #[arg(long, allow_hyphen_values = true)]
        nu: String,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        theta_offset: String,
        /// Default `10^4 · 2π`.
        #[arg(long)]
        tau_max: Option<String>,
        #[arg(long, default_value_t = 32)]
        bins: usize,
        #[arg(long, default_value = "1,0", allow_hyphen_values = true)]
        z0: String,
    },
    /// Compare the source–target derivative at `τ` and `τ + 2π` on `z = 0`.
    SelfIntersect {
        #[command(flatten)]
        profile: Profile,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 0.4, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long, default_value_t = 1.3)]
        r2: f64,
        #[arg(long, default_value_t = 0.9, allow_hyphen_values = true)]
        tau: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        h: f64,
    },
    /// Source, target and inverse of an element `(r, θ, r', τ, z, h)` of the
    /// leafwise groupoid.
    Gamma {
        #[command(flatten)]
        profile: Profile,
        #[arg(long)]
        r: f64,
        #[arg(long, allow_hyphen_values = true)]
        theta: f64,
        #[arg(long)]
        r2: f64,
        #[arg(long, allow_hyphen_values = true)]
        tau: f64,
        /// `u,w`.
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        #[arg(long, allow_hyphen_values = true)]
        h: f64,
    },
    /// Holonomy angle and sheet count at several levels `h`.
    Sweep {
        #[command(flatten)]
        profile: Profile,
        /// Comma-separated levels.
        #[arg(long, allow_hyphen_values = true)]
        levels: String,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_K_MAX)]
        k_max: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `ν(h)`: either the bump profile with peak `--nu0` or an explicit
/// expression in `h`.
#[derive(Args, Debug)]
pub struct Profile {
    #[arg(long, allow_hyphen_values = true, conflicts_with = "nu_expr")]
    pub nu0: Option<String>,
    #[arg(long = "nu-expr", allow_hyphen_values = true)]
    pub nu_expr: Option<String>,
}

impl Profile {
    fn connection(&self) -> CliResult<ExampleConnection> {
        match (&self.nu0, &self.nu_expr) {
            (Some(v), None) => Ok(ExampleConnection::with_profile(constant(v)?)),
            (None, Some(e)) => Ok(ExampleConnection::new(
                algpaths::expr::parse_in(e, &["h"]).map_err(|e| usage(format!("--nu-expr: {e}")))?,
            )),
            _ => Err(CliError::usage("give one of --nu0 or --nu-expr")),
        }
    }
}

fn constant(s: &str) -> CliResult<f64> {
    parse_constant(s).map_err(|e| usage(format!("bad number {s:?}: {e}")))
}

pub fn run(cmd: Example3Command, seed: u64) -> CliResult<()> {
    match cmd {
        Example3Command::Sheets { nu, k_max, json } => {
            let v = constant(&nu)?;
            let sheets = sheet_count(v, k_max);
            if json {
                print_json(&json!({ "nu": v, "k_max": k_max, "sheets": sheets.to_string() }));
            } else {
                crate::output::write_stdout(&format!("{sheets}\n"));
            }
            Ok(())
        }
        Example3Command::Density {
            nu,
            theta_offset,
            tau_max,
            bins,
            z0,
        } => {
            let z0 = number_list_of(&z0, 2, "--z0")?;
            if z0 == [0.0, 0.0] {
                return Err(CliError::usage("--z0 must be nonzero"));
            }
            if bins < 2 {
                return Err(CliError::usage("--bins must be at least 2"));
            }
            let tau_max = match tau_max {
                Some(t) => constant(&t)?,
                None => 1e4 * TAU,
            };
            let rep = density_scan(constant(&nu)?, constant(&theta_offset)?, [z0[0], z0[1]], tau_max, bins);
            print_json(&rep);
            Ok(())
        }
        Example3Command::SelfIntersect {
            profile,
            r,
            theta,
            r2,
            tau,
            h,
        } => {
            let e = profile.connection()?;
            let w = e.self_intersection_witness(r, theta, r2, tau, h).map_err(usage)?;
            print_json(&json!({
                "r": r, "theta": theta, "r2": r2, "tau": tau, "h": h,
                "witness": to_value(&w),
            }));
            Ok(())
        }
        Example3Command::Gamma {
            profile,
            r,
            theta,
            r2,
            tau,
            z,
            h,
        } => {
            let e = profile.connection()?;
            let z = number_list_of(&z, 2, "--z")?;
            let g = GammaElement {
                r,
                theta,
                r2,
                tau,
                z: [z[0], z[1]],
                h,
            };
            if !g.is_valid() {
                return Err(CliError::usage("need r > 0, r' > 0 and |h| < 1"));
            }
            let nu = e.nu(h);
            print_json(&json!({
                "element": to_value(&g),
                "nu": nu,
                "source": to_value(&e.gamma_source(&g)),
                "target": to_value(&e.gamma_target(&g)),
                "inverse": to_value(&g.inverse(nu)),
            }));
            Ok(())
        }
        Example3Command::Sweep {
            profile,
            levels,
            grid,
            step,
            k_max,
            out,
        } => {
            let e = profile.connection()?;
            let levels = number_list(&levels)?;
            let opts = LiftOptions {
                step,
                bound: DEFAULT_BOUND,
                ..LiftOptions::default()
            };
            let rows = e.holonomy_sweep(&levels, grid, &opts, k_max).map_err(usage)?;
            let report = json!({ "levels": levels, "grid": grid, "options": to_value(&opts), "seed": seed });
            emit_csv(&sweep_csv(&rows), out.as_deref(), &report)
        }
    }
}
