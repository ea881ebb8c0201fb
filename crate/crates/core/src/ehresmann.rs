//! Flat Ehresmann connections as comorphisms of tangent algebroids, and the
//! flat connection on `X = R² × C × R ∖ J` over the plane whose leafwise
//! groupoid is neither closed nor embedded.
//!
//! `X` uses cartesian coordinates `(x, y, u, w, h)` with `z = u + i w`; the
//! slab `J = {r = 0, |h| ≤ 1}` is removed. The connection form is
//! `i ν(h) dθ`, i.e. `H ∂_θ = ∂_θ + ν(h) ∂_Θ` with `∂_Θ = −w ∂_u + u ∂_w`.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::algebroid::LieAlgebroid;
use crate::apath::{APath, PathError};
use crate::comorph::{ComorphError, Comorphism, LiftError, LiftOptions};
use crate::expr::{parse_in, EvalError, Expr, MatrixMap, ParseError, SmoothMap};

pub const SECTION_TOL: f64 = 1e-10;
pub const LOOP_CLOSURE_TOL: f64 = 1e-9;
pub const DEFAULT_K_MAX: u64 = 1_000_000;
pub const SHEET_TOL: f64 = 1e-9;
/// Image points of the self-intersection witness must agree this closely.
pub const IMAGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error)]
pub enum ConnectionError {
    #[error("H must be {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error("Dφ·H differs from the identity by {residual:e} at {point:?}")]
    NotASection { residual: f64, point: Vec<f64> },
    #[error("loop is not closed: ends {gap:e} away from its start")]
    OpenLoop { gap: f64 },
    #[error("lifting failed: {0}")]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Comorph(#[from] ComorphError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Submersion `φ: X -> Y` with horizontal lift `H(x)` (columns `H e_i`).
#[derive(Debug, Clone)]
pub struct FlatConnection {
    phi: SmoothMap,
    h: MatrixMap,
}

impl FlatConnection {
    /// `phi` carries the domain of `X`; `h` is `dim X × dim Y` in the same
    /// variables.
    pub fn new(phi: SmoothMap, h: MatrixMap) -> Result<Self, ConnectionError> {
        let (n, m) = (phi.input_dim(), phi.output_dim());
        if h.rows() != n || h.cols() != m || h.map().input_dim() != n {
            return Err(ConnectionError::Shape { rows: n, cols: m });
        }
        let h = MatrixMap::new(n, m, h.map().clone().with_domain(phi.domain().to_vec()));
        Ok(FlatConnection { phi, h })
    }

    pub fn phi(&self) -> &SmoothMap {
        &self.phi
    }

    pub fn horizontal_lift(&self) -> &MatrixMap {
        &self.h
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.phi.in_domain(x)
    }

    /// `max |Dφ(x) H(x) − I|` entrywise, with the worst point.
    pub fn section_residual(&self, samples: &[Vec<f64>]) -> Result<(f64, Option<Vec<f64>>), EvalError> {
        let m = self.phi.output_dim();
        let mut worst = 0.0f64;
        let mut at = None;
        for x in samples {
            let r = (self.phi.jacobian(x)? * self.h.eval(x)? - DMatrix::identity(m, m)).amax();
            if r > worst {
                worst = r;
                at = Some(x.clone());
            }
        }
        Ok((worst, at))
    }

    /// Max over samples and pairs `i < j` of the vertical part of
    /// `[H e_i, H e_j]`, derivatives symbolic.
    pub fn flatness_residual(&self, samples: &[Vec<f64>]) -> Result<f64, EvalError> {
        let (n, m) = (self.phi.input_dim(), self.phi.output_dim());
        let mut worst = 0.0f64;
        for x in samples {
            let h = self.h.eval(x)?;
            let dh: Vec<DMatrix<f64>> = (0..n).map(|l| self.h.partial(x, l)).collect::<Result<_, _>>()?;
            let dphi = self.phi.jacobian(x)?;
            for i in 0..m {
                for j in i + 1..m {
                    let bracket = DVector::from_fn(n, |k, _| {
                        (0..n)
                            .map(|l| h[(l, i)] * dh[l][(k, j)] - h[(l, j)] * dh[l][(k, i)])
                            .sum::<f64>()
                    });
                    let vertical = &bracket - &h * (&dphi * &bracket);
                    worst = worst.max(vertical.norm());
                }
            }
        }
        Ok(worst)
    }

    /// `(φ, H)` as a comorphism `TX -> TY`. Checks the section property on
    /// `samples`.
    pub fn as_comorphism(&self, samples: &[Vec<f64>]) -> Result<Comorphism, ConnectionError> {
        let (residual, at) = self.section_residual(samples)?;
        if residual > SECTION_TOL {
            return Err(ConnectionError::NotASection {
                residual,
                point: at.unwrap_or_default(),
            });
        }
        let tx = Arc::new(LieAlgebroid::tangent_on(
            self.phi.vars().to_vec(),
            self.phi.domain().to_vec(),
        ));
        let ty = Arc::new(LieAlgebroid::tangent(self.phi.output_dim()));
        Ok(Comorphism::new(tx, ty, self.phi.clone(), self.h.clone())?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HolonomyReport {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// `max_k |φ(x(t_k)) − y(t_k)|` of the lift.
    pub projection_error: f64,
}

/// Transport `x0` around a closed base path of `TY` by horizontal lifting.
pub fn holonomy(c: &Comorphism, base_loop: &APath, x0: &[f64], opts: &LiftOptions) -> Result<(HolonomyReport, APath), ConnectionError> {
    let gap = (base_loop.target() - base_loop.source()).norm();
    if gap > LOOP_CLOSURE_TOL {
        return Err(ConnectionError::OpenLoop { gap });
    }
    let lifted = c.lift_path(base_loop, x0, opts)?;
    let report = HolonomyReport {
        start: x0.to_vec(),
        end: lifted.path.target().as_slice().to_vec(),
        projection_error: lifted.projection_error,
    };
    Ok((report, lifted.path))
}

/// Circle of radius `radius` about `center`, traversed `windings` times,
/// as an A-path of `TY` (`Y = R²`).
pub fn circle_loop(ty: Arc<LieAlgebroid>, center: [f64; 2], radius: f64, windings: i32, n: usize) -> Result<APath, PathError> {
    let w = TAU * windings as f64;
    APath::from_fn(ty, n, |t| {
        let (s, c) = (w * t).sin_cos();
        (
            vec![center[0] + radius * c, center[1] + radius * s],
            vec![-w * radius * s, w * radius * c],
        )
    })
}

/// `ν(h) = ν₀ · bump(−1/2, 1/2, h)`: smooth, supported in `[−1/2, 1/2]`,
/// with `ν(0) = ν₀`.
pub fn bump_profile(nu0: f64) -> Expr {
    Expr::mul(
        Expr::Const(nu0),
        parse_in("bump(-1/2, 1/2, h)", &["h"]).expect("bump profile"),
    )
}

/// The connection on `X = R² × C × R ∖ J` with connection form `iν(h)dθ`.
#[derive(Debug, Clone)]
pub struct ExampleConnection {
    nu: Expr,
    connection: FlatConnection,
}

pub const X_VARS: [&str; 5] = ["x", "y", "u", "w", "h"];

impl ExampleConnection {
    /// `nu` is an expression in the single variable `h`, assumed to vanish
    /// outside `[−1/2, 1/2]`.
    pub fn new(nu: Expr) -> Self {
        ExampleConnection::build(nu, false)
    }

    pub fn with_profile(nu0: f64) -> Self {
        ExampleConnection::new(bump_profile(nu0))
    }

    /// Same data with lift `∂_θ + r ν(h) ∂_Θ`, which is not flat.
    pub fn perturbed(nu: Expr) -> Self {
        ExampleConnection::build(nu, true)
    }

    fn build(nu: Expr, extra_r: bool) -> Self {
        let vars: Vec<String> = X_VARS.iter().map(|s| s.to_string()).collect();
        let p = |s: &str| parse_in(s, &X_VARS).expect("connection expression");
        let nu_x = nu.substitute(&[Expr::Var(4)]);
        // On the support of ν, D = r²; elsewhere D > 0 wherever X allows
        // r = 0, so the coefficients ν·x/D stay smooth on X.
        let d = p("x^2 + y^2 + flat(h^2 - 1/4)");
        let mut coeff = Expr::div(nu_x, d);
        if extra_r {
            coeff = Expr::mul(coeff, p("sqrt(x^2 + y^2)"));
        }
        let (ax, ay) = (Expr::neg(Expr::mul(coeff.clone(), p("y"))), Expr::mul(coeff, p("x")));
        let (vu, vw) = (p("-w"), p("u"));
        let one = Expr::Const(1.0);
        let zero = Expr::Const(0.0);
        let entries = vec![
            vec![one.clone(), zero.clone()],
            vec![zero.clone(), one],
            vec![Expr::mul(ax.clone(), vu.clone()), Expr::mul(ay.clone(), vu)],
            vec![Expr::mul(ax, vw.clone()), Expr::mul(ay, vw)],
            vec![zero.clone(), zero],
        ];
        let domain = vec![p("x^2 + y^2 + flat(h^2 - 1)")];
        let phi = SmoothMap::new(vars.clone(), vec![p("x"), p("y")], domain.clone());
        let h = MatrixMap::from_entries(vars, entries, domain);
        ExampleConnection {
            nu,
            connection: FlatConnection::new(phi, h).expect("example connection shape"),
        }
    }

    pub fn nu_expr(&self) -> &Expr {
        &self.nu
    }

    pub fn nu(&self, h: f64) -> f64 {
        self.nu.eval(&[h])
    }

    pub fn connection(&self) -> &FlatConnection {
        &self.connection
    }

    /// The comorphism `TX -> TY`; the section property holds by construction.
    pub fn comorphism(&self) -> Comorphism {
        self.connection
            .as_comorphism(&[vec![1.0, 0.0, 0.0, 0.0, 0.0]])
            .expect("example connection is a section")
    }

    /// Transport `z0` around the circle of radius `radius` about the origin
    /// at level `h`, `windings` times; returns the unwrapped phase of
    /// `z_end / z_start`.
    #[allow(clippy::too_many_arguments)]
    pub fn transport_phase(
        &self,
        c: &Comorphism,
        h: f64,
        z0: [f64; 2],
        center: [f64; 2],
        radius: f64,
        windings: i32,
        n: usize,
        opts: &LiftOptions,
    ) -> Result<PhaseReport, ConnectionError> {
        let g = circle_loop(c.target().clone(), center, radius, windings, n)?;
        let x0 = [center[0] + radius, center[1], z0[0], z0[1], h];
        let (report, lifted) = holonomy(c, &g, &x0, opts)?;
        let phase = unwrapped_phase(lifted.base());
        let modulus = (report.end[2].hypot(report.end[3])) / z0[0].hypot(z0[1]);
        Ok(PhaseReport {
            h,
            nu: self.nu(h),
            windings,
            phase,
            phase_mod: phase.rem_euclid(TAU),
            modulus_ratio: modulus,
            projection_error: report.projection_error,
            end: report.end,
        })
    }

    /// Holonomy around the unit circle at each level `h`, in parallel.
    pub fn holonomy_sweep(&self, levels: &[f64], n: usize, opts: &LiftOptions, k_max: u64) -> Result<Vec<SweepRow>, ConnectionError> {
        let c = self.comorphism();
        levels
            .par_iter()
            .map(|&h| {
                let r = self.transport_phase(&c, h, [1.0, 0.0], [0.0, 0.0], 1.0, 1, n, opts)?;
                Ok(SweepRow {
                    h,
                    nu: r.nu,
                    holonomy_angle: r.phase_mod,
                    sheets: sheet_count(r.nu, k_max),
                })
            })
            .collect()
    }

    pub fn gamma_source(&self, g: &GammaElement) -> PolarPoint {
        g.source()
    }

    pub fn gamma_target(&self, g: &GammaElement) -> PolarPoint {
        g.target(self.nu(g.h))
    }

    /// Compare the derivative of the source–target map at `(…, τ, z = 0)`
    /// and `(…, τ + 2π, z = 0)`.
    pub fn self_intersection_witness(&self, r: f64, theta: f64, r2: f64, tau: f64, h: f64) -> Result<SelfIntersection, EvalError> {
        let map = self.source_target_map();
        let p1 = [r, theta, r2, tau, 0.0, 0.0, h];
        let p2 = [r, theta, r2, tau + TAU, 0.0, 0.0, h];
        let (i1, i2) = (map.eval_vec(&p1)?, map.eval_vec(&p2)?);
        let (j1, j2) = (map.jacobian(&p1)?, map.jacobian(&p2)?);
        let nu = self.nu(h);
        let degenerate = (nu - nu.round()).abs() <= SHEET_TOL;
        Ok(SelfIntersection {
            nu,
            image_distance: (i1 - i2).amax(),
            gap: subspace_gap(&j1, &j2),
            expected_gap: (PI * nu).sin().abs(),
            degenerate,
        })
    }

    /// `(r, θ, r', τ, u, w, h) ↦ (source, target)` in cartesian coordinates
    /// of `X × X`.
    pub fn source_target_map(&self) -> SmoothMap {
        let vars = ["r", "theta", "r2", "tau", "u", "w", "h"];
        let p = |s: &str| parse_in(s, &vars).expect("source-target expression");
        let phase = Expr::mul(self.nu.substitute(&[Expr::Var(6)]), Expr::Var(3));
        let (c, s) = (
            Expr::call(crate::expr::Func::Cos, phase.clone()),
            Expr::call(crate::expr::Func::Sin, phase),
        );
        let comps = vec![
            p("r*cos(theta)"),
            p("r*sin(theta)"),
            p("u"),
            p("w"),
            p("h"),
            p("r2*cos(theta + tau)"),
            p("r2*sin(theta + tau)"),
            Expr::sub(Expr::mul(c.clone(), p("u")), Expr::mul(s.clone(), p("w"))),
            Expr::add(Expr::mul(s, p("u")), Expr::mul(c, p("w"))),
            p("h"),
        ];
        SmoothMap::new(vars.iter().map(|v| v.to_string()).collect(), comps, Vec::new())
    }
}

/// Unwrapped `arg z` along lifted samples `(x, y, u, w, h)`, relative to the
/// first sample.
pub fn unwrapped_phase(samples: &[DVector<f64>]) -> f64 {
    let mut total = 0.0;
    let mut prev = samples[0][3].atan2(samples[0][2]);
    for p in &samples[1..] {
        let a = p[3].atan2(p[2]);
        total += wrap_angle(a - prev);
        prev = a;
    }
    total
}

/// Representative of `a` in `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseReport {
    pub h: f64,
    pub nu: f64,
    pub windings: i32,
    /// Unwrapped phase of `z_end / z_start`.
    pub phase: f64,
    /// `phase` reduced to `[0, 2π)`.
    pub phase_mod: f64,
    pub modulus_ratio: f64,
    pub projection_error: f64,
    pub end: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub h: f64,
    pub nu: f64,
    pub holonomy_angle: f64,
    pub sheets: SheetCount,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("h,nu,holonomy_angle,sheets\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.h, r.nu, r.holonomy_angle, r.sheets));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SheetCount {
    Finite(u64),
    /// No order up to `k_max`; treated as infinite.
    Infinite { k_max: u64 },
}

impl std::fmt::Display for SheetCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SheetCount::Finite(k) => write!(f, "{k}"),
            SheetCount::Infinite { .. } => write!(f, "inf"),
        }
    }
}

/// Order of `nu` in `R/Z`: the least `k ≤ k_max` with `k·ν` within
/// [`SHEET_TOL`] of an integer.
pub fn sheet_count(nu: f64, k_max: u64) -> SheetCount {
    for k in 1..=k_max {
        let v = k as f64 * nu;
        if (v - v.round()).abs() <= SHEET_TOL {
            return SheetCount::Finite(k);
        }
    }
    SheetCount::Infinite { k_max }
}

/// Point of `X` in the polar coordinates `(r, θ, z, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolarPoint {
    pub r: f64,
    pub theta: f64,
    pub z: [f64; 2],
    pub h: f64,
}

impl PolarPoint {
    /// `(x, y, u, w, h)`.
    pub fn cartesian(&self) -> [f64; 5] {
        let (s, c) = self.theta.sin_cos();
        [self.r * c, self.r * s, self.z[0], self.z[1], self.h]
    }
}

fn rotate(z: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * z[0] - s * z[1], s * z[0] + c * z[1]]
}

/// Element `(r, θ, r', τ, z, h)` of the leafwise groupoid over `|h| < 1`:
/// the class of the horizontal path from `(r, θ, z, h)` winding by `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaElement {
    pub r: f64,
    pub theta: f64,
    pub r2: f64,
    pub tau: f64,
    pub z: [f64; 2],
    pub h: f64,
}

impl GammaElement {
    pub fn is_valid(&self) -> bool {
        self.r > 0.0 && self.r2 > 0.0 && self.h > -1.0 && self.h < 1.0
    }

    pub fn source(&self) -> PolarPoint {
        PolarPoint {
            r: self.r,
            theta: self.theta,
            z: self.z,
            h: self.h,
        }
    }

    /// `(r', θ + τ, e^{iντ} z, h)` for `nu = ν(h)`.
    pub fn target(&self, nu: f64) -> PolarPoint {
        PolarPoint {
            r: self.r2,
            theta: self.theta + self.tau,
            z: rotate(self.z, nu * self.tau),
            h: self.h,
        }
    }

    pub fn unit(p: PolarPoint) -> GammaElement {
        GammaElement {
            r: p.r,
            theta: p.theta,
            r2: p.r,
            tau: 0.0,
            z: p.z,
            h: p.h,
        }
    }

    pub fn inverse(&self, nu: f64) -> GammaElement {
        let t = self.target(nu);
        GammaElement {
            r: t.r,
            theta: t.theta,
            r2: self.r,
            tau: -self.tau,
            z: t.z,
            h: self.h,
        }
    }

    /// `self · first`: follow `first`, then `self`. Requires
    /// `source(self) = target(first)` within `tol`.
    pub fn compose(&self, first: &GammaElement, nu: f64, tol: f64) -> Option<GammaElement> {
        let t = first.target(nu);
        let s = self.source();
        let matches = (t.r - s.r).abs() <= tol
            && (t.theta - s.theta).abs() <= tol
            && (t.z[0] - s.z[0]).abs() <= tol
            && (t.z[1] - s.z[1]).abs() <= tol
            && t.h == s.h;
        matches.then_some(GammaElement {
            r: first.r,
            theta: first.theta,
            r2: self.r2,
            tau: first.tau + self.tau,
            z: first.z,
            h: first.h,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfIntersection {
    pub nu: f64,
    /// `max |image(τ) − image(τ + 2π)|`.
    pub image_distance: f64,
    /// Sine of the largest principal angle between the two derivative images.
    pub gap: f64,
    /// `|sin(πν)|`: half the chord of the rotation by `2πν`.
    pub expected_gap: f64,
    /// `ν` is an integer, so no self-intersection is expected.
    pub degenerate: bool,
}

fn column_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    u.columns(0, rank).into_owned()
}

/// `sin` of the largest principal angle between the column spaces of `a`
/// and `b` (1 when the ranks differ).
pub fn subspace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let (qa, qb) = (column_basis(a), column_basis(b));
    if qa.ncols() != qb.ncols() {
        return 1.0;
    }
    let cosines = (qa.transpose() * qb).singular_values();
    let cmin = cosines.min().clamp(0.0, 1.0);
    (1.0 - cmin * cmin).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    pub nu: f64,
    pub bins: usize,
    pub tau_max: f64,
    pub samples: usize,
    pub cells_hit: usize,
    pub coverage: f64,
    /// Distinct values of `arg z'` on the section `θ' = θ_offset`, i.e. the
    /// number of strands of the orbit.
    pub lines: usize,
    /// Largest circular gap between those values.
    pub max_angular_gap: f64,
}

/// Sample `(θ' mod 2π, arg z' mod 2π)` along `z' = e^{iν(θ'−θ)} z0` for
/// `τ = θ' − θ ∈ [0, τ_max]` and histogram it on a `bins × bins` grid.
pub fn density_scan(nu: f64, theta_offset: f64, z0: [f64; 2], tau_max: f64, bins: usize) -> DensityReport {
    assert!(bins >= 2, "need at least two bins");
    assert!(z0[0] != 0.0 || z0[1] != 0.0, "z0 must be nonzero");
    let cell = TAU / bins as f64;
    let dtau = cell / (8.0 * nu.abs().max(1.0));
    let samples = (tau_max / dtau).ceil() as usize + 1;
    let arg0 = z0[1].atan2(z0[0]);
    let bin = |a: f64| ((a.rem_euclid(TAU) / cell) as usize).min(bins - 1);
    let mut hit = vec![false; bins * bins];
    for k in 0..samples {
        let tau = (k as f64 * dtau).min(tau_max);
        hit[bin(theta_offset + tau) * bins + bin(arg0 + nu * tau)] = true;
    }
    let cells_hit = hit.iter().filter(|&&h| h).count();
    let windings = (tau_max / TAU + 1e-9).floor() as u64;
    let mut phases: Vec<f64> = (0..=windings).map(|k| (k as f64 * nu).rem_euclid(1.0)).collect();
    phases.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::new();
    for p in phases {
        if distinct.last().is_none_or(|&q| p - q > SHEET_TOL) {
            distinct.push(p);
        }
    }
    if distinct.len() > 1 && distinct[0] + 1.0 - distinct.last().unwrap() <= SHEET_TOL {
        distinct.pop();
    }
    let mut max_gap = 1.0 - distinct.last().unwrap() + distinct[0];
    for w in distinct.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    DensityReport {
        nu,
        bins,
        tau_max,
        samples,
        cells_hit,
        coverage: cells_hit as f64 / (bins * bins) as f64,
        lines: distinct.len(),
        max_angular_gap: max_gap * TAU,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::default_names;

    fn trivial() -> FlatConnection {
        let vars = default_names("x", 2);
        let phi = SmoothMap::parse(&vars, &["x1"], &[]).unwrap();
        let h = MatrixMap::from_entries(vars, vec![vec![Expr::Const(1.0)], vec![Expr::Const(1.0)]], Vec::new());
        FlatConnection::new(phi, h).unwrap()
    }

    fn samples(e: &ExampleConnection, count: usize) -> Vec<Vec<f64>> {
        let tx = LieAlgebroid::tangent_on(
            X_VARS.iter().map(|s| s.to_string()).collect(),
            e.connection().phi().domain().to_vec(),
        );
        tx.sample_domain(11, count, 1.5).unwrap()
    }

    #[test]
    fn trivial_connection_is_flat_section() {
        let t = trivial();
        let pts = vec![vec![0.0, 0.0], vec![1.0, -2.0]];
        assert_eq!(t.section_residual(&pts).unwrap().0, 0.0);
        assert_eq!(t.flatness_residual(&pts).unwrap(), 0.0);
        let c = t.as_comorphism(&pts).unwrap();
        assert_eq!(c.fiber_at(&[0.5, 0.5]).unwrap().as_slice(), &[1.0, 1.0]);
        assert!(c.anchor_compat_residual(&pts).unwrap() <= 1e-12);
    }

    #[test]
    fn example_is_a_flat_section() {
        let e = ExampleConnection::with_profile(1.0 / 3.0);
        let pts = samples(&e, 50);
        assert!(e.connection().section_residual(&pts).unwrap().0 <= SECTION_TOL);
        assert!(e.connection().flatness_residual(&pts).unwrap() <= 1e-10);
        assert!(e.comorphism().anchor_compat_residual(&pts).unwrap() <= 1e-12);
        let bad = ExampleConnection::perturbed(bump_profile(1.0 / 3.0));
        assert!(bad.connection().flatness_residual(&pts).unwrap() > 1e-3);
    }

    #[test]
    fn cartesian_lift_off_the_support() {
        let e = ExampleConnection::with_profile(0.25);
        for x in [[0.0, 0.0, 1.0, 2.0, 1.5], [0.3, -0.4, 0.5, 0.5, 0.7]] {
            let h = e.connection().horizontal_lift().eval(&x).unwrap();
            let mut expected = DMatrix::zeros(5, 2);
            expected[(0, 0)] = 1.0;
            expected[(1, 1)] = 1.0;
            assert_eq!(h, expected);
        }
    }

    #[test]
    fn nu_profile() {
        let e = ExampleConnection::with_profile(1.0 / 3.0);
        assert!((e.nu(0.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.nu(0.5), 0.0);
        assert_eq!(e.nu(-0.7), 0.0);
        assert!(e.nu(0.4) > 0.0);
    }

    #[test]
    fn sheet_counts() {
        assert_eq!(sheet_count(1.0 / 3.0, DEFAULT_K_MAX), SheetCount::Finite(3));
        assert_eq!(sheet_count(0.0, DEFAULT_K_MAX), SheetCount::Finite(1));
        assert_eq!(sheet_count(0.25, DEFAULT_K_MAX), SheetCount::Finite(4));
        assert_eq!(
            sheet_count(2f64.sqrt() - 1.0, DEFAULT_K_MAX),
            SheetCount::Infinite { k_max: DEFAULT_K_MAX }
        );
    }

    #[test]
    fn gamma_maps() {
        let e = ExampleConnection::with_profile(1.0 / 3.0);
        let g = GammaElement {
            r: 1.0,
            theta: 0.0,
            r2: 1.0,
            tau: TAU,
            z: [1.0, 0.0],
            h: 0.0,
        };
        let t = e.gamma_target(&g);
        let (s, c) = (TAU / 3.0).sin_cos();
        assert_eq!((t.r, t.theta, t.h), (1.0, TAU, 0.0));
        assert!((t.z[0] - c).abs() < 1e-15 && (t.z[1] - s).abs() < 1e-15);
        let unit = GammaElement::unit(e.gamma_source(&g));
        assert_eq!(e.gamma_target(&unit), unit.source());
        let zero = GammaElement { z: [0.0, 0.0], ..g };
        assert_eq!(e.gamma_target(&zero).z, [0.0, 0.0]);
    }

    #[test]
    fn transport_matches_closed_form() {
        let e = ExampleConnection::with_profile(1.0 / 3.0);
        let c = e.comorphism();
        let opts = LiftOptions::default();
        let r = e.transport_phase(&c, 0.0, [1.0, 0.0], [0.0, 0.0], 1.0, 1, 1000, &opts).unwrap();
        assert!((r.phase - TAU / 3.0).abs() <= 1e-6, "{}", r.phase);
        assert!((r.modulus_ratio - 1.0).abs() < 1e-9);
        let off = e.transport_phase(&c, 0.0, [1.0, 0.0], [3.0, 0.0], 1.0, 1, 1000, &opts).unwrap();
        assert!(off.phase.abs() <= 1e-6);
    }

    #[test]
    fn principal_angle_oracle() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!((subspace_gap(&a, &b) - (PI / 4.0).sin()).abs() < 1e-12);
        assert!(subspace_gap(&a, &a) < 1e-12);
    }

    #[test]
    fn self_intersection_gaps() {
        for (nu0, expected) in [(1.0 / 3.0, (PI / 3.0).sin()), (0.5, 1.0), (0.0, 0.0)] {
            let e = ExampleConnection::with_profile(nu0);
            let w = e.self_intersection_witness(1.0, 0.3, 1.5, 0.7, 0.0).unwrap();
            assert!(w.image_distance <= IMAGE_TOL);
            assert!((w.gap - expected).abs() <= 1e-6, "{nu0}: {}", w.gap);
            assert_eq!(w.degenerate, nu0 == 0.0);
        }
    }

    #[test]
    fn density_rational_and_trivial() {
        let third = density_scan(1.0 / 3.0, 0.0, [1.0, 0.0], 100.0 * TAU, 32);
        assert_eq!(third.lines, 3);
        assert!((third.max_angular_gap - TAU / 3.0).abs() < 1e-9);
        let flat = density_scan(0.0, 0.0, [1.0, 0.0], 10.0 * TAU, 32);
        assert_eq!(flat.lines, 1);
        assert_eq!(flat.cells_hit, 32);
    }
}
