//! Poisson manifolds on one chart: Hamiltonian fields, Poisson maps, the
//! cotangent-lift comorphism, the tangent-lift bivector and completeness
//! probes for Poisson maps.
//!
//! Sign convention: `(Π♯ξ)^i = Π^{ij} ξ_j`, so `ξ_f = Π ∇f`. On the standard
//! symplectic plane (`Π^{12} = 1`) the oscillator `f = (x² + y²)/2` gives
//! `ξ_f = (y, −x)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::algebroid::{LieAlgebroid, SectionTD};
use crate::comorph::{probe_field, ComorphError, Comorphism, ProbeParams, ProbeReport, Verdict};
use crate::expr::{default_names, parse, EvalError, Expr, MatrixMap, ParseError, SmoothMap};
use crate::sampling;

/// Largest Poisson-map residual accepted by [`cotangent_lift`].
pub const POISSON_MAP_TOL: f64 = 1e-8;
/// Probe verdicts must locate the same escape time to this accuracy.
pub const T_STAR_AGREEMENT: f64 = 1e-3;
/// Pointwise agreement of `ξ_{φ*f}` and `ρ_X (T*φ)†df`.
pub const FIELD_AGREEMENT: f64 = 1e-9;

#[derive(Debug, Clone, Error)]
pub enum PoissonError {
    #[error("bivector key ({i},{j}) is invalid: need i < j < {dim}")]
    Key { i: usize, j: usize, dim: usize },
    #[error("map is not Poisson: residual {residual:e} at {point:?}")]
    NotPoisson { residual: f64, point: Vec<f64> },
    #[error("map must go from R^{expected_in} to R^{expected_out}")]
    MapShape { expected_in: usize, expected_out: usize },
    #[error("could not draw sample points from the domain")]
    Sampling,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Comorph(#[from] ComorphError),
}

/// Bivector field `Π` on an open subset of `R^n`, stored as its upper
/// triangle.
#[derive(Debug, Clone)]
pub struct PoissonManifold {
    matrix: MatrixMap,
}

impl PoissonManifold {
    /// `entries` maps `(i, j)` with `i < j` to `Π^{ij}`; missing entries are
    /// zero.
    pub fn new(vars: Vec<String>, entries: &BTreeMap<(usize, usize), Expr>, domain: Vec<Expr>) -> Result<Self, PoissonError> {
        let n = vars.len();
        let mut full = vec![vec![Expr::Const(0.0); n]; n];
        for (&(i, j), e) in entries {
            if !(i < j && j < n) {
                return Err(PoissonError::Key { i, j, dim: n });
            }
            full[i][j] = e.clone();
            full[j][i] = Expr::neg(e.clone());
        }
        Ok(PoissonManifold {
            matrix: MatrixMap::from_entries(vars, full, domain),
        })
    }

    /// Parse 1-based `(i, j)` entries.
    pub fn parse(vars: &[String], entries: &[((usize, usize), String)], domain: &[String]) -> Result<Self, PoissonError> {
        let mut map = BTreeMap::new();
        for ((i, j), s) in entries {
            if *i == 0 || *j == 0 {
                return Err(PoissonError::Key {
                    i: *i,
                    j: *j,
                    dim: vars.len(),
                });
            }
            map.insert((i - 1, j - 1), parse(s, vars)?);
        }
        let domain = domain.iter().map(|s| parse(s, vars)).collect::<Result<Vec<_>, _>>()?;
        PoissonManifold::new(vars.to_vec(), &map, domain)
    }

    /// `Π = ∂_x ∧ ∂_y` on `R²`.
    pub fn standard_symplectic() -> Self {
        let map = BTreeMap::from([((0, 1), Expr::Const(1.0))]);
        PoissonManifold::new(default_names("x", 2), &map, Vec::new()).unwrap()
    }

    /// Lie–Poisson structure `Π^{ij} = ε_{ijk} x_k` on `so(3)*`.
    pub fn lie_poisson_so3() -> Self {
        let map = BTreeMap::from([
            ((0, 1), Expr::Var(2)),
            ((1, 2), Expr::Var(0)),
            ((0, 2), Expr::neg(Expr::Var(1))),
        ]);
        PoissonManifold::new(default_names("x", 3), &map, Vec::new()).unwrap()
    }

    pub fn zero(n: usize) -> Self {
        PoissonManifold::new(default_names("x", n), &BTreeMap::new(), Vec::new()).unwrap()
    }

    pub fn with_domain(&self, domain: Vec<Expr>) -> Self {
        let map = self.matrix.map().clone().with_domain(domain);
        PoissonManifold {
            matrix: MatrixMap::new(self.dim(), self.dim(), map),
        }
    }

    /// `λΠ`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let n = self.dim();
        let entries = (0..n)
            .map(|i| (0..n).map(|j| Expr::mul(Expr::Const(lambda), self.entry(i, j))).collect())
            .collect();
        PoissonManifold {
            matrix: MatrixMap::from_entries(self.vars().to_vec(), entries, self.domain().to_vec()),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn vars(&self) -> &[String] {
        self.matrix.map().vars()
    }

    pub fn domain(&self) -> &[Expr] {
        self.matrix.map().domain()
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.matrix.map().in_domain(x)
    }

    /// `Π^{ij}` for any index order.
    pub fn entry(&self, i: usize, j: usize) -> Expr {
        self.matrix.entry(i, j).clone()
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        self.matrix.eval(x)
    }

    /// `sup |Σ_cyc Π^{il} ∂_l Π^{jk}|` over samples and index triples.
    pub fn jacobi_residual(&self, samples: &[Vec<f64>]) -> Result<f64, EvalError> {
        let n = self.dim();
        let mut worst = 0.0f64;
        for x in samples {
            let pi = self.eval(x)?;
            let dpi: Vec<DMatrix<f64>> = (0..n).map(|l| self.matrix.partial(x, l)).collect::<Result<_, _>>()?;
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        let mut s = 0.0;
                        for l in 0..n {
                            s += pi[(i, l)] * dpi[l][(j, k)] + pi[(j, l)] * dpi[l][(k, i)] + pi[(k, l)] * dpi[l][(i, j)];
                        }
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        Ok(worst)
    }

    pub fn sample_domain(&self, seed: u64, count: usize, radius: f64) -> Result<Vec<Vec<f64>>, PoissonError> {
        let mut rng = sampling::rng(seed);
        sampling::sample_points(&mut rng, self.dim(), radius, count, |p| self.in_domain(p)).ok_or(PoissonError::Sampling)
    }

    /// `ξ_f = Π ∇f` as a symbolic autonomous field on the domain.
    pub fn hamiltonian_vf(&self, f: &Expr) -> SmoothMap {
        let n = self.dim();
        let grad: Vec<Expr> = (0..n).map(|j| f.diff(j)).collect();
        let comps = (0..n)
            .map(|i| {
                (0..n).fold(Expr::Const(0.0), |acc, j| Expr::add(acc, Expr::mul(self.entry(i, j), grad[j].clone())))
            })
            .collect();
        SmoothMap::new(self.vars().to_vec(), comps, self.domain().to_vec())
    }

    /// Bivector on `(x, v) ∈ R^{2n}` with `{x^i, v^j} = Π^{ij}(x)` and
    /// `{v^i, v^j} = ∂_k Π^{ij}(x) v^k`; the `x`–`x` block vanishes.
    pub fn tangent_lift(&self) -> PoissonManifold {
        let n = self.dim();
        let mut vars = self.vars().to_vec();
        vars.extend(self.vars().iter().map(|v| format!("d{v}")));
        let mut entries = BTreeMap::new();
        for i in 0..n {
            for j in 0..n {
                let e = self.entry(i, j);
                if !e.is_zero() {
                    entries.insert((i, n + j), e);
                }
            }
            for j in i + 1..n {
                let e = (0..n).fold(Expr::Const(0.0), |acc, k| {
                    Expr::add(acc, Expr::mul(self.entry(i, j).diff(k), Expr::Var(n + k)))
                });
                if !e.is_zero() {
                    entries.insert((n + i, n + j), e);
                }
            }
        }
        // The lifted domain constrains only the base coordinates.
        PoissonManifold::new(vars, &entries, self.domain().to_vec()).unwrap()
    }
}

/// Cotangent algebroid `T*X` of a Poisson manifold.
pub fn cotangent_algebroid(p: &PoissonManifold) -> LieAlgebroid {
    LieAlgebroid::cotangent_poisson(p)
}

fn check_map(phi: &SmoothMap, px: &PoissonManifold, py: &PoissonManifold) -> Result<(), PoissonError> {
    if phi.input_dim() != px.dim() || phi.output_dim() != py.dim() {
        return Err(PoissonError::MapShape {
            expected_in: px.dim(),
            expected_out: py.dim(),
        });
    }
    Ok(())
}

/// `max |Dφ Π_X Dφᵀ − Π_Y ∘ φ|` entrywise over samples, with the point where
/// it is attained.
pub fn poisson_map_residual(
    phi: &SmoothMap,
    px: &PoissonManifold,
    py: &PoissonManifold,
    samples: &[Vec<f64>],
) -> Result<(f64, Option<Vec<f64>>), PoissonError> {
    check_map(phi, px, py)?;
    let mut worst = 0.0f64;
    let mut at = None;
    for x in samples {
        let d = phi.jacobian(x)?;
        let lhs = &d * px.eval(x)? * d.transpose();
        let r = (lhs - py.eval(&phi.eval(x)?)?).amax();
        if r > worst {
            worst = r;
            at = Some(x.clone());
        }
    }
    Ok((worst, at))
}

/// `T*φ` as a comorphism `T*X -> T*Y` with fiber matrix `Dφᵀ`, without the
/// Poisson check.
pub fn cotangent_lift_unchecked(phi: &SmoothMap, px: &PoissonManifold, py: &PoissonManifold) -> Result<Comorphism, PoissonError> {
    check_map(phi, px, py)?;
    let (n, m) = (px.dim(), py.dim());
    let partials = phi.partial_exprs();
    let entries = (0..n).map(|a| (0..m).map(|b| partials[b][a].clone()).collect()).collect();
    let fiber = MatrixMap::from_entries(px.vars().to_vec(), entries, Vec::new());
    let phi = SmoothMap::new(px.vars().to_vec(), phi.components().to_vec(), Vec::new());
    Ok(Comorphism::new(
        Arc::new(cotangent_algebroid(px)),
        Arc::new(cotangent_algebroid(py)),
        phi,
        fiber,
    )?)
}

/// `T*φ`, rejected when the Poisson-map residual on `samples` exceeds
/// [`POISSON_MAP_TOL`].
pub fn cotangent_lift(
    phi: &SmoothMap,
    px: &PoissonManifold,
    py: &PoissonManifold,
    samples: &[Vec<f64>],
) -> Result<Comorphism, PoissonError> {
    let (residual, at) = poisson_map_residual(phi, px, py, samples)?;
    if residual > POISSON_MAP_TOL {
        return Err(PoissonError::NotPoisson {
            residual,
            point: at.unwrap_or_default(),
        });
    }
    cotangent_lift_unchecked(phi, px, py)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionProbe {
    pub function: String,
    pub hamiltonian: ProbeReport,
    pub comorphism: ProbeReport,
    /// Optional flow of `ξ_f` on the target seeds.
    pub target: Option<ProbeReport>,
    /// `max |ξ_{φ*f} − ρ_X (T*φ)†df|` at the seeds.
    pub field_gap: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompleteMapReport {
    pub verdict: Verdict,
    pub horizon: f64,
    pub bound: f64,
    pub step: f64,
    pub probes: Vec<FunctionProbe>,
    pub all_agree: bool,
}

/// For each test function `f` on `Y`, probe `ξ_{φ*f}` on `X` and, separately,
/// the cotangent-lift comorphism along `df`; the two verdicts must agree.
#[allow(clippy::too_many_arguments)]
pub fn complete_map_probe(
    phi: &SmoothMap,
    px: &PoissonManifold,
    py: &PoissonManifold,
    test_functions: &[Expr],
    params: &ProbeParams,
    seeds: &[Vec<f64>],
    target_seeds: Option<&[Vec<f64>]>,
    check_samples: &[Vec<f64>],
) -> Result<CompleteMapReport, PoissonError> {
    let lift = cotangent_lift(phi, px, py, check_samples)?;
    let mut probes = Vec::with_capacity(test_functions.len());
    for f in test_functions {
        let pulled = f.substitute(phi.components());
        let xi = px.hamiltonian_vf(&pulled);
        let hamiltonian = probe_field(&xi, params, seeds, |x| px.in_domain(x))?;
        let df = SectionTD::differential(py.vars(), f);
        let comorphism = lift.completeness_probe(&df, params, seeds)?;
        let target = match target_seeds {
            Some(ys) => Some(lift.target_probe(&df, params, ys)?),
            None => None,
        };
        let pulled_section = lift.pullback_section(&df)?;
        let mut field_gap = 0.0f64;
        for x in seeds {
            let a = xi.eval_vec(x)?;
            let b = lift.source().anchor_at(x)? * pulled_section.eval(0.0, x)?;
            field_gap = field_gap.max((a - b).amax());
        }
        let same_verdict = hamiltonian.verdict == comorphism.verdict;
        let same_time = match (hamiltonian.t_star(), comorphism.t_star()) {
            (Some(a), Some(b)) => (a - b).abs() <= T_STAR_AGREEMENT,
            (None, None) => true,
            _ => false,
        };
        probes.push(FunctionProbe {
            function: f.display(py.vars()).to_string(),
            hamiltonian,
            comorphism,
            target,
            field_gap,
            agree: same_verdict && same_time && field_gap <= FIELD_AGREEMENT,
        });
    }
    let verdict = if probes.iter().any(|p| p.hamiltonian.is_incomplete()) {
        Verdict::IncompleteWitness
    } else {
        Verdict::NoEscapeDetected
    };
    Ok(CompleteMapReport {
        verdict,
        horizon: params.horizon,
        bound: params.bound,
        step: params.step,
        all_agree: probes.iter().all(|p| p.agree),
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_in;
    use crate::numkernel::{flow, DEFAULT_BOUND};

    #[test]
    fn oscillator_sign_convention() {
        let p = PoissonManifold::standard_symplectic();
        let f = parse_in("(x1^2 + x2^2)/2", &["x1", "x2"]).unwrap();
        let xi = p.hamiltonian_vf(&f);
        assert_eq!(xi.eval(&[0.3, 0.7]).unwrap(), vec![0.7, -0.3]);
        let tr = flow(&xi, &[1.0, 0.0], (0.0, 1.0), 1e-3, DEFAULT_BOUND).unwrap();
        let end = tr.last();
        assert!((end[0] - 1f64.cos()).abs() < 1e-10 && (end[1] + 1f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn constant_hamiltonian_is_zero_field() {
        let p = PoissonManifold::lie_poisson_so3();
        let xi = p.hamiltonian_vf(&Expr::Const(4.0));
        assert!(xi.components().iter().all(Expr::is_zero));
    }

    #[test]
    fn cubic_hamiltonian_blows_up() {
        let p = PoissonManifold::standard_symplectic();
        let f = parse_in("x1^2*x2", &["x1", "x2"]).unwrap();
        let xi = p.hamiltonian_vf(&f);
        assert_eq!(xi.eval(&[2.0, 3.0]).unwrap(), vec![4.0, -12.0]);
        let tr = flow(&xi, &[1.0, 0.0], (0.0, 2.0), 1e-3, 1e6).unwrap();
        assert!((tr.status.t_star().unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn map_residuals() {
        let p = PoissonManifold::standard_symplectic();
        let vars = default_names("x", 2);
        let pts = p.sample_domain(2, 10, 3.0).unwrap();
        let id = SmoothMap::identity(vars.clone(), Vec::new());
        assert_eq!(poisson_map_residual(&id, &p, &p, &pts).unwrap().0, 0.0);
        let stretch = SmoothMap::parse(&vars, &["x1", "2*x2"], &[]).unwrap();
        assert_eq!(poisson_map_residual(&stretch, &p, &p, &pts).unwrap().0, 1.0);
        let c = cotangent_lift_unchecked(&stretch, &p, &p).unwrap();
        assert_eq!(c.anchor_compat_residual(&pts).unwrap(), 1.0);
        assert!(matches!(
            cotangent_lift(&stretch, &p, &p, &pts),
            Err(PoissonError::NotPoisson { residual, .. }) if residual == 1.0
        ));
        let proj = SmoothMap::parse(&vars, &["x1"], &[]).unwrap();
        let z = PoissonManifold::zero(1);
        assert_eq!(poisson_map_residual(&proj, &p, &z, &pts).unwrap().0, 0.0);
        let lift = cotangent_lift(&proj, &p, &z, &pts).unwrap();
        assert_eq!(lift.fiber_at(&[0.4, 0.1]).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(lift.anchor_compat_residual(&pts).unwrap() <= 1e-12);
    }

    #[test]
    fn tangent_lifts_are_poisson() {
        let lifted = PoissonManifold::standard_symplectic().tangent_lift();
        assert_eq!(lifted.dim(), 4);
        let pts = lifted.sample_domain(4, 20, 2.0).unwrap();
        assert_eq!(lifted.jacobi_residual(&pts).unwrap(), 0.0);
        assert_eq!(lifted.eval(&[1.0, 2.0, 3.0, 4.0]).unwrap()[(2, 3)], 0.0);
        let zero = PoissonManifold::zero(2).tangent_lift();
        assert_eq!(zero.eval(&[1.0, 2.0, 3.0, 4.0]).unwrap().amax(), 0.0);
        let so3 = PoissonManifold::lie_poisson_so3().tangent_lift();
        let pts = so3.sample_domain(5, 100, 2.0).unwrap();
        assert!(so3.jacobi_residual(&pts).unwrap() <= 1e-10);
    }
}
