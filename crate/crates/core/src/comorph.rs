//! Lie algebroid comorphisms `(φ, Φ)` with `Φ(x, ξ) = M(x) ξ`: section
//! pullback, composition, completeness probes and path/homotopy lifting.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::algebroid::{AnchoredSection, LieAlgebroid, SectionTD};
use crate::apath::{AHomotopy, APath, PathError};
use crate::expr::{EvalError, Expr, MatrixMap, SmoothMap};
use crate::numkernel::{self, interpolate, FieldError, FlowError, FlowStatus, Interpolation, VectorField};

/// Largest allowed `|φ(x0) − y(0)|` for a lift start point.
pub const LIFT_START_TOL: f64 = 1e-6;
/// Largest homotopy residual admitted as input to homotopy lifting.
pub const HOMOTOPY_INPUT_TOL: f64 = 1e-3;

/// A source point and its image.
pub type PointPair = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, Error)]
pub enum ComorphError {
    #[error("core map must go from R^{expected_in} to R^{expected_out}, got R^{got_in} -> R^{got_out}")]
    CoreShape {
        expected_in: usize,
        expected_out: usize,
        got_in: usize,
        got_out: usize,
    },
    #[error("fiber matrix must be {rows}x{cols} in {vars} variables, got {got_rows}x{got_cols} in {got_vars}")]
    FiberShape {
        rows: usize,
        cols: usize,
        vars: usize,
        got_rows: usize,
        got_cols: usize,
        got_vars: usize,
    },
    #[error("cannot compose: intermediate algebroids differ in base dimension or rank")]
    ChainMismatch,
    #[error("section has rank {got}, expected {expected}")]
    SectionRank { expected: usize, got: usize },
    #[error("seed {0:?} lies outside the source domain")]
    SeedOutsideDomain(Vec<f64>),
    #[error("φ maps {point:?} to {image:?}, outside the target domain")]
    ImageOutsideDomain { point: Vec<f64>, image: Vec<f64> },
    #[error("start point projects to {projected:?}, path starts at {start:?}")]
    StartMismatch { projected: Vec<f64>, start: Vec<f64> },
    #[error("path is not over the comorphism's target algebroid")]
    WrongAlgebroid,
    #[error("input homotopy residual {0:e} exceeds {HOMOTOPY_INPUT_TOL:e}")]
    HomotopyInput(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Comorphism from `A` (over `X`) to `B` (over `Y`): core map `φ: X -> Y` and
/// fiber matrix `M(x)` of size `rank A × rank B`.
#[derive(Debug, Clone)]
pub struct Comorphism {
    source: Arc<LieAlgebroid>,
    target: Arc<LieAlgebroid>,
    phi: SmoothMap,
    m: MatrixMap,
}

impl Comorphism {
    pub fn new(
        source: Arc<LieAlgebroid>,
        target: Arc<LieAlgebroid>,
        phi: SmoothMap,
        m: MatrixMap,
    ) -> Result<Self, ComorphError> {
        let (n, p) = (source.base_dim(), target.base_dim());
        if phi.input_dim() != n || phi.output_dim() != p {
            return Err(ComorphError::CoreShape {
                expected_in: n,
                expected_out: p,
                got_in: phi.input_dim(),
                got_out: phi.output_dim(),
            });
        }
        if m.rows() != source.rank() || m.cols() != target.rank() || m.map().input_dim() != n {
            return Err(ComorphError::FiberShape {
                rows: source.rank(),
                cols: target.rank(),
                vars: n,
                got_rows: m.rows(),
                got_cols: m.cols(),
                got_vars: m.map().input_dim(),
            });
        }
        // Both maps are evaluated on the source domain.
        let dom = source.domain().to_vec();
        let phi = phi.with_domain(dom.clone());
        let m = MatrixMap::new(m.rows(), m.cols(), m.map().clone().with_domain(dom));
        Ok(Comorphism {
            source,
            target,
            phi,
            m,
        })
    }

    /// `(id, id)` on `A`.
    pub fn identity(a: Arc<LieAlgebroid>) -> Self {
        let vars = a.vars().to_vec();
        let r = a.rank();
        let phi = SmoothMap::identity(vars.clone(), Vec::new());
        let entries = (0..r)
            .map(|i| (0..r).map(|j| Expr::Const(if i == j { 1.0 } else { 0.0 })).collect())
            .collect();
        let m = MatrixMap::from_entries(vars, entries, Vec::new());
        Comorphism::new(a.clone(), a, phi, m).expect("identity comorphism shape")
    }

    pub fn source(&self) -> &Arc<LieAlgebroid> {
        &self.source
    }

    pub fn target(&self) -> &Arc<LieAlgebroid> {
        &self.target
    }

    pub fn phi(&self) -> &SmoothMap {
        &self.phi
    }

    pub fn fiber_map(&self) -> &MatrixMap {
        &self.m
    }

    pub fn fiber_at(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        self.m.eval(x)
    }

    /// `max |Dφ(x) ρ_A(x) M(x) e − ρ_B(φ(x)) e|` over samples and basis
    /// vectors `e` of `B`.
    pub fn anchor_compat_residual(&self, samples: &[Vec<f64>]) -> Result<f64, ComorphError> {
        let mut worst = 0.0f64;
        for x in samples {
            if !self.source.in_domain(x) {
                return Err(ComorphError::SeedOutsideDomain(x.clone()));
            }
            let lhs = self.phi.jacobian(x)? * self.source.anchor_at(x)? * self.m.eval(x)?;
            let y = self.phi.eval(x)?;
            let rhs = self.target.anchor_at(&y)?;
            for col in 0..lhs.ncols() {
                worst = worst.max((lhs.column(col) - rhs.column(col)).norm());
            }
        }
        Ok(worst)
    }

    /// First sample whose image lies outside the target domain, with that
    /// image.
    pub fn image_violation(&self, samples: &[Vec<f64>]) -> Result<Option<PointPair>, EvalError> {
        for x in samples {
            let y = self.phi.eval(x)?;
            if !self.target.in_domain(&y) {
                return Ok(Some((x.clone(), y)));
            }
        }
        Ok(None)
    }

    /// `(Φ†s)(t, x) = M(x) s(t, φ(x))`, built symbolically.
    pub fn pullback_section(&self, s: &SectionTD) -> Result<SectionTD, ComorphError> {
        if s.rank() != self.target.rank() {
            return Err(ComorphError::SectionRank {
                expected: self.target.rank(),
                got: s.rank(),
            });
        }
        let mut replacements = vec![Expr::Var(0)];
        replacements.extend(self.phi.components().iter().map(|c| c.shift_vars(1)));
        let pulled: Vec<Expr> = s.components().iter().map(|c| c.substitute(&replacements)).collect();
        let comps = (0..self.m.rows())
            .map(|a| {
                (0..self.m.cols()).fold(Expr::Const(0.0), |acc, b| {
                    Expr::add(acc, Expr::mul(self.m.entry(a, b).shift_vars(1), pulled[b].clone()))
                })
            })
            .collect();
        let vars = crate::algebroid::section_vars(self.source.vars());
        Ok(SectionTD::new(SmoothMap::new(vars, comps, Vec::new())))
    }

    /// `self ⋆ next` for `self: A -> B`, `next: B -> C`: core `φ₂ ∘ φ₁`, fiber
    /// `M₁(x) M₂(φ₁(x))`, all symbolic.
    pub fn compose(&self, next: &Comorphism) -> Result<Comorphism, ComorphError> {
        let b1 = &self.target;
        let b2 = &next.source;
        if b1.base_dim() != b2.base_dim() || b1.rank() != b2.rank() {
            return Err(ComorphError::ChainMismatch);
        }
        let phi = next.phi.compose_after(&self.phi);
        let m2 = next.m.map().compose_after(&self.phi);
        let (ra, rb, rc) = (self.m.rows(), self.m.cols(), next.m.cols());
        let entries = (0..ra)
            .map(|a| {
                (0..rc)
                    .map(|c| {
                        (0..rb).fold(Expr::Const(0.0), |acc, b| {
                            Expr::add(
                                acc,
                                Expr::mul(self.m.entry(a, b).clone(), m2.components()[b * rc + c].clone()),
                            )
                        })
                    })
                    .collect()
            })
            .collect();
        let m = MatrixMap::from_entries(self.source.vars().to_vec(), entries, Vec::new());
        Comorphism::new(self.source.clone(), next.target.clone(), phi, m)
    }

    /// Semi-decision for completeness along one section: flows
    /// `ρ_A Φ†s` from every seed over `[0, T]`.
    pub fn completeness_probe(&self, s: &SectionTD, params: &ProbeParams, seeds: &[Vec<f64>]) -> Result<ProbeReport, ComorphError> {
        let pulled = self.pullback_section(s)?;
        let field = AnchoredSection::new(&self.source, &pulled);
        probe_field(&field, params, seeds, |x| self.source.in_domain(x))
    }

    /// Flow `ρ_B s` on target seeds, to confirm the section is complete
    /// within the same parameters.
    pub fn target_probe(&self, s: &SectionTD, params: &ProbeParams, seeds: &[Vec<f64>]) -> Result<ProbeReport, ComorphError> {
        let field = AnchoredSection::new(&self.target, s);
        probe_field(&field, params, seeds, |y| self.target.in_domain(y))
    }

    /// Lift an A-path of `B` through `x0`: integrates `ẋ = ρ_A(x) M(x) ξ(t)`
    /// with `ξ` interpolated from the path's fiber samples.
    pub fn lift_path(&self, g: &APath, x0: &[f64], opts: &LiftOptions) -> Result<LiftedPath, LiftError> {
        if !same_algebroid(g.algebroid(), &self.target) {
            return Err(ComorphError::WrongAlgebroid.into());
        }
        if !self.source.in_domain(x0) {
            return Err(ComorphError::SeedOutsideDomain(x0.to_vec()).into());
        }
        let projected = DVector::from_vec(self.phi.eval(x0).map_err(ComorphError::from)?);
        if (&projected - g.source()).norm() > LIFT_START_TOL {
            return Err(ComorphError::StartMismatch {
                projected: projected.as_slice().to_vec(),
                start: g.source().as_slice().to_vec(),
            }
            .into());
        }
        let n = g.intervals();
        let substeps = numkernel::step_count(1.0 / n as f64, opts.step);
        let field = LiftField {
            comorphism: self,
            fiber: g.fiber(),
            scheme: opts.interpolation,
        };
        let tr = numkernel::flow(&field, x0, (0.0, 1.0), 1.0 / (n * substeps) as f64, opts.bound)
            .map_err(ComorphError::from)?;
        if !tr.status.is_completed() {
            return Err(LiftError::Failure {
                status: tr.status,
                last_time: *tr.times.last().unwrap(),
                last_point: tr.last().to_vec(),
            });
        }
        let mut base = Vec::with_capacity(n + 1);
        let mut fiber = Vec::with_capacity(n + 1);
        let mut projection_error = 0.0f64;
        for k in 0..=n {
            let x = &tr.points[k * substeps];
            let m = self.m.eval(x).map_err(ComorphError::from)?;
            fiber.push(m * &g.fiber()[k]);
            let y = DVector::from_vec(self.phi.eval(x).map_err(ComorphError::from)?);
            projection_error = projection_error.max((y - &g.base()[k]).norm());
            base.push(DVector::from_column_slice(x));
        }
        let path = APath::new(self.source.clone(), base, fiber).map_err(ComorphError::from)?;
        Ok(LiftedPath { path, projection_error })
    }

    /// Lift every `s`-slice of a homotopy of `B` through `x0` (in parallel)
    /// and set `β_A = M(x) β_B`.
    pub fn lift_homotopy(&self, hb: &AHomotopy, x0: &[f64], opts: &LiftOptions) -> Result<AHomotopy, HomotopyLiftError> {
        let input = hb
            .homotopy_residual()
            .map_err(|e| HomotopyLiftError::Input(ComorphError::from(e)))?;
        if input.max() > HOMOTOPY_INPUT_TOL {
            return Err(HomotopyLiftError::Input(ComorphError::HomotopyInput(input.max())));
        }
        let (nt, ns) = (hb.t_intervals(), hb.s_intervals());
        let slices: Vec<[Vec<DVector<f64>>; 3]> = (0..=ns)
            .into_par_iter()
            .map(|l| {
                let lifted = self
                    .lift_path(&hb.slice(l), x0, opts)
                    .map_err(|e| HomotopyLiftError::Slice {
                        s: l as f64 / ns as f64,
                        source: Box::new(e),
                    })?;
                let beta = (0..=nt)
                    .map(|k| {
                        let x = lifted.path.base()[k].as_slice();
                        Ok(self.m.eval(x)? * hb.beta(k, l))
                    })
                    .collect::<Result<Vec<_>, EvalError>>()
                    .map_err(|e| HomotopyLiftError::Input(e.into()))?;
                Ok([lifted.path.base().to_vec(), lifted.path.fiber().to_vec(), beta])
            })
            .collect::<Result<_, HomotopyLiftError>>()?;
        let mut x = Vec::with_capacity(ns + 1);
        let mut eta = Vec::with_capacity(ns + 1);
        let mut beta = Vec::with_capacity(ns + 1);
        for [a, b, c] in slices {
            x.push(a);
            eta.push(b);
            beta.push(c);
        }
        AHomotopy::new(self.source.clone(), x, eta, beta).map_err(|e| HomotopyLiftError::Input(e.into()))
    }

    /// Lift `g` with cubic and linear fiber interpolation at step `h` and
    /// `h/2`, and report how far the four results disagree.
    pub fn lift_uniqueness_check(&self, g: &APath, x0: &[f64], opts: &LiftOptions) -> Result<UniquenessReport, ComorphError> {
        let mut variants = Vec::new();
        for interpolation in [Interpolation::Cubic, Interpolation::Linear] {
            for step in [opts.step, opts.step / 2.0] {
                let o = LiftOptions {
                    step,
                    interpolation,
                    ..*opts
                };
                let outcome = match self.lift_path(g, x0, &o) {
                    Ok(l) => VariantOutcome::Endpoint(l.path.target().as_slice().to_vec()),
                    Err(LiftError::Failure { status, .. }) => VariantOutcome::Failed {
                        t_star: status.t_star().unwrap_or(f64::NAN),
                    },
                    Err(LiftError::Setup(e)) => return Err(e),
                };
                variants.push(UniquenessVariant {
                    interpolation,
                    step,
                    outcome,
                });
            }
        }
        let endpoints: Vec<&Vec<f64>> = variants
            .iter()
            .filter_map(|v| match &v.outcome {
                VariantOutcome::Endpoint(p) => Some(p),
                _ => None,
            })
            .collect();
        let exits: Vec<f64> = variants
            .iter()
            .filter_map(|v| match v.outcome {
                VariantOutcome::Failed { t_star } => Some(t_star),
                _ => None,
            })
            .collect();
        let mut endpoint_spread = 0.0f64;
        for a in &endpoints {
            for b in &endpoints {
                let d = a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                endpoint_spread = endpoint_spread.max(d);
            }
        }
        let exit_spread = if exits.is_empty() {
            0.0
        } else {
            exits.iter().cloned().fold(f64::MIN, f64::max) - exits.iter().cloned().fold(f64::MAX, f64::min)
        };
        Ok(UniquenessReport {
            endpoint_spread,
            exit_spread,
            consistent: endpoints.is_empty() || exits.is_empty(),
            variants,
        })
    }
}

fn same_algebroid(a: &Arc<LieAlgebroid>, b: &Arc<LieAlgebroid>) -> bool {
    Arc::ptr_eq(a, b)
        || (a.base_dim() == b.base_dim()
            && a.rank() == b.rank()
            && a.anchor_map().map().components() == b.anchor_map().map().components()
            && a.domain() == b.domain())
}

struct LiftField<'a> {
    comorphism: &'a Comorphism,
    fiber: &'a [DVector<f64>],
    scheme: Interpolation,
}

impl VectorField for LiftField<'_> {
    fn dim(&self) -> usize {
        self.comorphism.source.base_dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        let xi = interpolate(self.fiber, t, self.scheme);
        let v = self.comorphism.source.anchor_at(x)? * (self.comorphism.m.eval(x)? * xi);
        out.copy_from_slice(v.as_slice());
        Ok(())
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        self.comorphism.source.in_domain(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiftOptions {
    /// Largest RK4 step; the path grid is subdivided to reach it.
    pub step: f64,
    pub bound: f64,
    pub interpolation: Interpolation,
}

impl Default for LiftOptions {
    fn default() -> Self {
        LiftOptions {
            step: numkernel::DEFAULT_STEP,
            bound: numkernel::DEFAULT_BOUND,
            interpolation: Interpolation::Cubic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiftedPath {
    pub path: APath,
    /// `max_k |φ(x(t_k)) − y(t_k)|`.
    pub projection_error: f64,
}

#[derive(Debug, Clone, Error)]
pub enum LiftError {
    /// The lift stopped early: the comorphism is not complete along this
    /// path.
    #[error("lift failed: {status}; last accepted point {last_point:?} at t = {last_time}")]
    Failure {
        status: FlowStatus,
        last_time: f64,
        last_point: Vec<f64>,
    },
    #[error(transparent)]
    Setup(#[from] ComorphError),
}

#[derive(Debug, Clone, Error)]
pub enum HomotopyLiftError {
    #[error("slice s = {s} failed to lift: {source}")]
    Slice { s: f64, source: Box<LiftError> },
    #[error(transparent)]
    Input(ComorphError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantOutcome {
    Endpoint(Vec<f64>),
    Failed { t_star: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessVariant {
    pub interpolation: Interpolation,
    pub step: f64,
    pub outcome: VariantOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    /// Max pairwise distance between successful endpoints.
    pub endpoint_spread: f64,
    /// Spread of exit times among failed variants.
    pub exit_spread: f64,
    /// False when some variants succeed and others fail.
    pub consistent: bool,
    pub variants: Vec<UniquenessVariant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeParams {
    pub horizon: f64,
    pub bound: f64,
    pub step: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams {
            horizon: 10.0,
            bound: numkernel::DEFAULT_BOUND,
            step: numkernel::DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Inconclusive: nothing escaped within the horizon and bound.
    NoEscapeDetected,
    /// Conclusive: some flow line escaped.
    IncompleteWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub seed: Vec<f64>,
    pub status: FlowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub verdict: Verdict,
    pub summary: String,
    pub horizon: f64,
    pub bound: f64,
    pub step: f64,
    pub seeds: usize,
    /// Earliest escape over all seeds.
    pub witness: Option<Witness>,
}

impl ProbeReport {
    pub fn is_incomplete(&self) -> bool {
        self.verdict == Verdict::IncompleteWitness
    }

    pub fn t_star(&self) -> Option<f64> {
        self.witness.as_ref().and_then(|w| w.status.t_star())
    }
}

/// Flow `field` from every seed over `[0, horizon]` and summarize.
pub fn probe_field(
    field: &dyn VectorField,
    params: &ProbeParams,
    seeds: &[Vec<f64>],
    in_domain: impl Fn(&[f64]) -> bool,
) -> Result<ProbeReport, ComorphError> {
    let mut witness: Option<Witness> = None;
    for seed in seeds {
        if !in_domain(seed) {
            return Err(ComorphError::SeedOutsideDomain(seed.clone()));
        }
        let tr = numkernel::flow(field, seed, (0.0, params.horizon), params.step, params.bound)?;
        if let Some(t) = tr.status.t_star() {
            if witness.as_ref().and_then(|w| w.status.t_star()).is_none_or(|best| t < best) {
                witness = Some(Witness {
                    seed: seed.clone(),
                    status: tr.status,
                });
            }
        }
    }
    let (verdict, summary) = match &witness {
        None => (
            Verdict::NoEscapeDetected,
            format!(
                "no escape detected (T={}, bound={:e}) from {} seeds",
                params.horizon,
                params.bound,
                seeds.len()
            ),
        ),
        Some(w) => (
            Verdict::IncompleteWitness,
            format!("incomplete witness: {} from seed {:?}", w.status, w.seed),
        ),
    };
    Ok(ProbeReport {
        verdict,
        summary,
        horizon: params.horizon,
        bound: params.bound,
        step: params.step,
        seeds: seeds.len(),
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{default_names, parse_in};

    fn tangent(n: usize) -> Arc<LieAlgebroid> {
        Arc::new(LieAlgebroid::tangent(n))
    }

    /// Trivial connection on `R² -> R`, `φ = x1`, `H ∂_y = ∂_{x1} + ∂_{x2}`.
    fn trivial_connection() -> Comorphism {
        let vars = default_names("x", 2);
        let phi = SmoothMap::parse(&vars, &["x1"], &[]).unwrap();
        let m = MatrixMap::from_entries(vars, vec![vec![Expr::Const(1.0)], vec![Expr::Const(1.0)]], Vec::new());
        Comorphism::new(tangent(2), tangent(1), phi, m).unwrap()
    }

    #[test]
    fn identity_residual_zero() {
        let c = Comorphism::identity(tangent(2));
        assert_eq!(c.anchor_compat_residual(&[vec![0.3, 1.0], vec![-2.0, 5.0]]).unwrap(), 0.0);
        assert!(trivial_connection().anchor_compat_residual(&[vec![1.0, 2.0]]).unwrap() <= 1e-12);
    }

    #[test]
    fn pullbacks() {
        let c = trivial_connection();
        let s = SectionTD::constant(&default_names("y", 1), &[1.0]);
        let p = c.pullback_section(&s).unwrap();
        assert_eq!(p.eval(0.2, &[3.0, -1.0]).unwrap().as_slice(), &[1.0, 1.0]);
        let z = c.pullback_section(&SectionTD::zero(&default_names("y", 1), 1)).unwrap();
        assert_eq!(z.eval(0.0, &[1.0, 1.0]).unwrap().as_slice(), &[0.0, 0.0]);
        let id = Comorphism::identity(tangent(2));
        let s2 = SectionTD::parse(&default_names("x", 2), &["t*x2", "sin(x1)"]).unwrap();
        let p2 = id.pullback_section(&s2).unwrap();
        for (t, x) in [(0.5, [1.0, 2.0]), (2.0, [-0.3, 0.7])] {
            assert_eq!(p2.eval(t, &x).unwrap(), s2.eval(t, &x).unwrap());
        }
    }

    #[test]
    fn compose_with_identity() {
        let c = trivial_connection();
        let left = Comorphism::identity(tangent(2)).compose(&c).unwrap();
        let right = c.compose(&Comorphism::identity(tangent(1))).unwrap();
        for x in [[0.1, 0.2], [4.0, -3.0]] {
            let m = c.fiber_at(&x).unwrap();
            assert_eq!(left.fiber_at(&x).unwrap(), m);
            assert_eq!(right.fiber_at(&x).unwrap(), m);
        }
    }

    #[test]
    fn straight_lift_of_trivial_connection() {
        let c = trivial_connection();
        let g = APath::from_fn(c.target().clone(), 100, |t| (vec![t], vec![1.0])).unwrap();
        let lifted = c.lift_path(&g, &[0.0, 0.0], &LiftOptions::default()).unwrap();
        for (k, x) in lifted.path.base().iter().enumerate() {
            let t = g.time(k);
            assert!((x[0] - t).abs() <= 1e-8 && (x[1] - t).abs() <= 1e-8);
        }
        assert!(lifted.projection_error <= 1e-12);
        let rep = c.lift_uniqueness_check(&g, &[0.0, 0.0], &LiftOptions::default()).unwrap();
        assert!(rep.endpoint_spread <= 1e-8);
        let unit = APath::constant(c.target().clone(), &[0.0], 10).unwrap();
        let l = c.lift_path(&unit, &[0.0, 3.0], &LiftOptions::default()).unwrap();
        assert!(l.path.base().iter().all(|x| x.as_slice() == [0.0, 3.0]));
    }

    #[test]
    fn start_must_project_onto_path() {
        let c = trivial_connection();
        let g = APath::from_fn(c.target().clone(), 10, |t| (vec![t], vec![1.0])).unwrap();
        assert!(matches!(
            c.lift_path(&g, &[0.5, 0.0], &LiftOptions::default()),
            Err(LiftError::Setup(ComorphError::StartMismatch { .. }))
        ));
    }

    #[test]
    fn open_disk_inclusion_escapes() {
        let vars = default_names("x", 2);
        let disk = parse_in("1 - x1^2 - x2^2", &["x1", "x2"]).unwrap();
        let a = Arc::new(LieAlgebroid::tangent_on(vars.clone(), vec![disk]));
        let b = tangent(2);
        let phi = SmoothMap::identity(vars.clone(), Vec::new());
        let m = MatrixMap::from_entries(
            vars.clone(),
            vec![vec![Expr::Const(1.0), Expr::Const(0.0)], vec![Expr::Const(0.0), Expr::Const(1.0)]],
            Vec::new(),
        );
        let c = Comorphism::new(a, b, phi, m).unwrap();
        let s = SectionTD::constant(&vars, &[1.0, 0.0]);
        let params = ProbeParams {
            horizon: 2.0,
            ..ProbeParams::default()
        };
        let rep = c.completeness_probe(&s, &params, &[vec![0.0, 0.0]]).unwrap();
        assert!(rep.is_incomplete());
        assert!((rep.t_star().unwrap() - 1.0).abs() < 1e-6);
        let target = c.target_probe(&s, &params, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(target.verdict, Verdict::NoEscapeDetected);
    }

    #[test]
    fn bump_section_is_complete() {
        let vars = default_names("x", 2);
        let c = Comorphism::identity(tangent(2));
        // Rotation cut off outside 1 < r² < 4.
        let s = SectionTD::parse(&vars, &["-x2*bump(1, 4, x1^2+x2^2)", "x1*bump(1, 4, x1^2+x2^2)"]).unwrap();
        let params = ProbeParams {
            horizon: 100.0,
            step: 1e-2,
            ..ProbeParams::default()
        };
        let seeds = vec![vec![1.5, 0.0], vec![0.0, 0.5], vec![3.0, 3.0]];
        let rep = c.completeness_probe(&s, &params, &seeds).unwrap();
        assert_eq!(rep.verdict, Verdict::NoEscapeDetected);
        assert!(rep.summary.contains("T=100"));
    }
}
