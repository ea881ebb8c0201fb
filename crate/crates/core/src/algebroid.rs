//! Lie algebroids given by local structure functions `ρ^i_a(x)` and
//! `f^c_{ab}(x)` on one global chart.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{default_names, parse, EvalError, Expr, MatrixMap, ParseError, SmoothMap};
use crate::numkernel::{FieldError, VectorField};
use crate::poisson::PoissonManifold;
use crate::sampling;

pub const LIE_ALGEBRA_JACOBI_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgebroidError {
    #[error("bracket key ({c},{a},{b}) is invalid: need a < b and all indices below rank {rank}")]
    BracketKey {
        c: usize,
        a: usize,
        b: usize,
        rank: usize,
    },
    #[error("anchor must be {rows}x{cols}, got {got_rows}x{got_cols}")]
    AnchorShape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("structure constants fail the Jacobi identity (residual {residual:e})")]
    Jacobi { residual: f64 },
    #[error("structure constants are not antisymmetric at ({c},{a},{b})")]
    NotAntisymmetric { c: usize, a: usize, b: usize },
    #[error("could not draw sample points from the domain")]
    Sampling,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

fn pair_count(r: usize) -> usize {
    r * r.saturating_sub(1) / 2
}

fn pair_index(r: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < r);
    a * (2 * r - a - 1) / 2 + (b - a - 1)
}

/// Dense `f^c_{ab}` values at a point, antisymmetric in `a, b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketTensor {
    rank: usize,
    values: Vec<f64>,
}

impl BracketTensor {
    fn from_stored(rank: usize, stored: &[f64]) -> Self {
        let mut values = vec![0.0; rank * rank * rank];
        for c in 0..rank {
            for a in 0..rank {
                for b in a + 1..rank {
                    let v = stored[c * pair_count(rank) + pair_index(rank, a, b)];
                    values[(c * rank + a) * rank + b] = v;
                    values[(c * rank + b) * rank + a] = -v;
                }
            }
        }
        BracketTensor { rank, values }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `f^c_{ab}`.
    pub fn get(&self, c: usize, a: usize, b: usize) -> f64 {
        self.values[(c * self.rank + a) * self.rank + b]
    }

    /// Fiber bracket `f(u, v)^c = f^c_{ab} u^a v^b` of pointwise values.
    pub fn apply(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let r = self.rank;
        DVector::from_fn(r, |c, _| {
            let mut s = 0.0;
            for a in 0..r {
                for b in 0..r {
                    s += self.get(c, a, b) * u[a] * v[b];
                }
            }
            s
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Lie algebroid `A -> U ⊂ R^n` of rank `r` in a fixed frame `e_1..e_r`.
///
/// The bracket stores only `a < b` entries, so antisymmetry holds by
/// construction. A Lie algebra is modeled over a one-dimensional base with
/// zero anchor.
#[derive(Debug, Clone)]
pub struct LieAlgebroid {
    anchor: MatrixMap,
    bracket: SmoothMap,
    rank: usize,
    over_point: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxiomReport {
    pub samples: usize,
    /// `sup |ρ^i_c f^c_{ab} − (ρ^j_a ∂_j ρ^i_b − ρ^j_b ∂_j ρ^i_a)|`
    pub anchor_morphism: f64,
    /// `sup |Σ_cyc (f^e_{bc} f^d_{ae} + ρ^j_a ∂_j f^d_{bc})|`
    pub jacobi: f64,
}

impl AxiomReport {
    pub fn max(&self) -> f64 {
        self.anchor_morphism.max(self.jacobi)
    }
}

impl LieAlgebroid {
    /// `anchor` is `n x r`; `bracket` maps `(c, a, b)` with `a < b` to
    /// `f^c_{ab}`. Missing entries are zero.
    pub fn new(
        vars: Vec<String>,
        anchor: Vec<Vec<Expr>>,
        rank: usize,
        bracket: &BTreeMap<(usize, usize, usize), Expr>,
        domain: Vec<Expr>,
    ) -> Result<Self, AlgebroidError> {
        let n = vars.len();
        let got_cols = anchor.first().map_or(rank, |r| r.len());
        if anchor.len() != n || anchor.iter().any(|row| row.len() != rank) {
            return Err(AlgebroidError::AnchorShape {
                rows: n,
                cols: rank,
                got_rows: anchor.len(),
                got_cols,
            });
        }
        let mut stored = vec![Expr::Const(0.0); rank * pair_count(rank)];
        for (&(c, a, b), e) in bracket {
            if !(a < b && b < rank && c < rank) {
                return Err(AlgebroidError::BracketKey { c, a, b, rank });
            }
            stored[c * pair_count(rank) + pair_index(rank, a, b)] = e.clone();
        }
        Ok(LieAlgebroid {
            anchor: MatrixMap::from_entries(vars.clone(), anchor, domain.clone()),
            bracket: SmoothMap::new(vars, stored, domain),
            rank,
            over_point: false,
        })
    }

    /// Parse anchor rows and `"c,a,b"`-style bracket entries (1-based).
    pub fn parse(
        vars: &[String],
        anchor: &[Vec<String>],
        rank: usize,
        bracket: &[((usize, usize, usize), String)],
        domain: &[String],
    ) -> Result<Self, AlgebroidError> {
        let anchor = anchor
            .iter()
            .map(|row| row.iter().map(|s| parse(s, vars)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let mut map = BTreeMap::new();
        for ((c, a, b), s) in bracket {
            if *c == 0 || *a == 0 || *b == 0 {
                return Err(AlgebroidError::BracketKey {
                    c: *c,
                    a: *a,
                    b: *b,
                    rank,
                });
            }
            map.insert((c - 1, a - 1, b - 1), parse(s, vars)?);
        }
        let domain = domain.iter().map(|s| parse(s, vars)).collect::<Result<Vec<_>, _>>()?;
        LieAlgebroid::new(vars.to_vec(), anchor, rank, &map, domain)
    }

    /// `TU` for the open set `U` cut out by `domain`; identity anchor, zero
    /// bracket in the coordinate frame.
    pub fn tangent_on(vars: Vec<String>, domain: Vec<Expr>) -> Self {
        let n = vars.len();
        let anchor = (0..n)
            .map(|i| (0..n).map(|j| Expr::Const(if i == j { 1.0 } else { 0.0 })).collect())
            .collect();
        LieAlgebroid::new(vars, anchor, n, &BTreeMap::new(), domain).expect("tangent algebroid shape")
    }

    pub fn tangent(n: usize) -> Self {
        LieAlgebroid::tangent_on(default_names("x", n), Vec::new())
    }

    /// Lie algebra with constants `c[k][i][j] = c^k_{ij}` as an algebroid over
    /// a point (modeled as a one-dimensional base with zero anchor).
    pub fn lie_algebra(constants: &[Vec<Vec<f64>>]) -> Result<Self, AlgebroidError> {
        let r = constants.len();
        for (k, ck) in constants.iter().enumerate() {
            for i in 0..r {
                for j in 0..r {
                    if (ck[i][j] + ck[j][i]).abs() > 0.0 {
                        return Err(AlgebroidError::NotAntisymmetric { c: k, a: i, b: j });
                    }
                }
            }
        }
        let residual = structure_constant_jacobi(constants);
        if residual > LIE_ALGEBRA_JACOBI_TOL {
            return Err(AlgebroidError::Jacobi { residual });
        }
        let mut bracket = BTreeMap::new();
        for (k, ck) in constants.iter().enumerate() {
            for a in 0..r {
                for b in a + 1..r {
                    if ck[a][b] != 0.0 {
                        bracket.insert((k, a, b), Expr::Const(ck[a][b]));
                    }
                }
            }
        }
        let anchor = vec![vec![Expr::Const(0.0); r]];
        let mut alg = LieAlgebroid::new(default_names("x", 1), anchor, r, &bracket, Vec::new())?;
        alg.over_point = true;
        Ok(alg)
    }

    /// The cotangent algebroid `T*X` of a Poisson manifold in the frame of
    /// coordinate 1-forms: `ρ^i_a = Π^{ia}` and `f^k_{ij} = −∂_k Π^{ij}`.
    ///
    /// The bracket sign is forced by the anchor convention
    /// `(Π♯ξ)^i = Π^{ij} ξ_j`: with it, `ρ` must be a bracket morphism.
    pub fn cotangent_poisson(p: &PoissonManifold) -> Self {
        let n = p.dim();
        let anchor = (0..n).map(|i| (0..n).map(|a| p.entry(i, a)).collect()).collect();
        let mut bracket = BTreeMap::new();
        for k in 0..n {
            for i in 0..n {
                for j in i + 1..n {
                    let d = Expr::neg(p.entry(i, j).diff(k));
                    if !d.is_zero() {
                        bracket.insert((k, i, j), d);
                    }
                }
            }
        }
        LieAlgebroid::new(p.vars().to_vec(), anchor, n, &bracket, p.domain().to_vec())
            .expect("cotangent algebroid shape")
    }

    /// Replace a single stored bracket entry `f^c_{ab}`, `a < b`.
    pub fn with_bracket_entry(&self, c: usize, a: usize, b: usize, e: Expr) -> Result<Self, AlgebroidError> {
        let r = self.rank;
        if !(a < b && b < r && c < r) {
            return Err(AlgebroidError::BracketKey { c, a, b, rank: r });
        }
        let mut comps = self.bracket.components().to_vec();
        comps[c * pair_count(r) + pair_index(r, a, b)] = e;
        let mut out = self.clone();
        out.bracket = SmoothMap::new(self.vars().to_vec(), comps, self.domain().to_vec());
        Ok(out)
    }

    pub fn base_dim(&self) -> usize {
        self.anchor.rows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_over_point(&self) -> bool {
        self.over_point
    }

    pub fn vars(&self) -> &[String] {
        self.anchor.map().vars()
    }

    pub fn domain(&self) -> &[Expr] {
        self.anchor.map().domain()
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.anchor.map().in_domain(x)
    }

    pub fn anchor_map(&self) -> &MatrixMap {
        &self.anchor
    }

    pub fn anchor_expr(&self, i: usize, a: usize) -> &Expr {
        self.anchor.entry(i, a)
    }

    /// `f^c_{ab}` as an expression, for any index order.
    pub fn bracket_expr(&self, c: usize, a: usize, b: usize) -> Expr {
        let r = self.rank;
        if a == b {
            Expr::Const(0.0)
        } else if a < b {
            self.bracket.components()[c * pair_count(r) + pair_index(r, a, b)].clone()
        } else {
            Expr::neg(self.bracket_expr(c, b, a))
        }
    }

    pub fn anchor_at(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        self.anchor.eval(x)
    }

    pub fn bracket_at(&self, x: &[f64]) -> Result<BracketTensor, EvalError> {
        Ok(BracketTensor::from_stored(self.rank, &self.bracket.eval(x)?))
    }

    /// `∂_j f^c_{ab}` at `x`.
    pub fn bracket_partial_at(&self, x: &[f64], j: usize) -> Result<BracketTensor, EvalError> {
        Ok(BracketTensor::from_stored(self.rank, &self.bracket.partial(x, j)?))
    }

    /// Sup of both axiom residuals over `samples`, derivatives symbolic.
    pub fn check_axioms(&self, samples: &[Vec<f64>]) -> Result<AxiomReport, AlgebroidError> {
        let (n, r) = (self.base_dim(), self.rank);
        let mut report = AxiomReport {
            samples: samples.len(),
            anchor_morphism: 0.0,
            jacobi: 0.0,
        };
        for x in samples {
            let rho = self.anchor_at(x)?;
            let drho: Vec<DMatrix<f64>> = (0..n).map(|j| self.anchor.partial(x, j)).collect::<Result<_, _>>()?;
            let f = self.bracket_at(x)?;
            let df: Vec<BracketTensor> = (0..n).map(|j| self.bracket_partial_at(x, j)).collect::<Result<_, _>>()?;
            for a in 0..r {
                for b in a + 1..r {
                    for i in 0..n {
                        let mut lhs = 0.0;
                        for c in 0..r {
                            lhs += rho[(i, c)] * f.get(c, a, b);
                        }
                        let mut rhs = 0.0;
                        for j in 0..n {
                            rhs += rho[(j, a)] * drho[j][(i, b)] - rho[(j, b)] * drho[j][(i, a)];
                        }
                        report.anchor_morphism = report.anchor_morphism.max((lhs - rhs).abs());
                    }
                }
            }
            for a in 0..r {
                for b in a + 1..r {
                    for c in b + 1..r {
                        for d in 0..r {
                            let mut sum = 0.0;
                            for (p, q, s) in [(a, b, c), (b, c, a), (c, a, b)] {
                                for e in 0..r {
                                    sum += f.get(e, q, s) * f.get(d, p, e);
                                }
                                for j in 0..n {
                                    sum += rho[(j, p)] * df[j].get(d, q, s);
                                }
                            }
                            report.jacobi = report.jacobi.max(sum.abs());
                        }
                    }
                }
            }
        }
        Ok(report)
    }

    /// `count` seeded points of the domain inside `[-radius, radius]^n`.
    pub fn sample_domain(&self, seed: u64, count: usize, radius: f64) -> Result<Vec<Vec<f64>>, AlgebroidError> {
        let mut rng = sampling::rng(seed);
        sampling::sample_points(&mut rng, self.base_dim(), radius, count, |p| self.in_domain(p))
            .ok_or(AlgebroidError::Sampling)
    }
}

/// Largest cyclic Jacobi sum `Σ_cyc c^e_{ij} c^m_{ek}` over all index
/// triples, for constants `c[k][i][j] = c^k_{ij}`.
pub fn structure_constant_jacobi(c: &[Vec<Vec<f64>>]) -> f64 {
    let r = c.len();
    let mut worst = 0.0f64;
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                for m in 0..r {
                    let mut s = 0.0;
                    for e in 0..r {
                        s += c[e][i][j] * c[m][e][k] + c[e][j][k] * c[m][e][i] + c[e][k][i] * c[m][e][j];
                    }
                    worst = worst.max(s.abs());
                }
            }
        }
    }
    worst
}

/// Time-dependent section `s(t, x)` of an algebroid, as expressions in the
/// variables `t, x1..xn`.
#[derive(Debug, Clone)]
pub struct SectionTD {
    map: SmoothMap,
}

impl SectionTD {
    /// `components` are expressions in `[time_var, base vars...]`.
    pub fn new(map: SmoothMap) -> Self {
        assert!(map.input_dim() >= 1, "section needs a time variable");
        SectionTD { map }
    }

    pub fn parse(base_vars: &[String], components: &[&str]) -> Result<Self, ParseError> {
        let vars = section_vars(base_vars);
        Ok(SectionTD::new(SmoothMap::parse(&vars, components, &[])?))
    }

    /// Constant section with the given fiber coordinates.
    pub fn constant(base_vars: &[String], values: &[f64]) -> Self {
        let comps = values.iter().map(|&v| Expr::Const(v)).collect();
        SectionTD::new(SmoothMap::new(section_vars(base_vars), comps, Vec::new()))
    }

    pub fn zero(base_vars: &[String], rank: usize) -> Self {
        SectionTD::constant(base_vars, &vec![0.0; rank])
    }

    /// Time-independent section `x ↦ ds` for a function `f` of the base:
    /// components `∂f/∂x_i`.
    pub fn differential(base_vars: &[String], f: &Expr) -> Self {
        let comps = (0..base_vars.len()).map(|i| f.diff(i).shift_vars(1)).collect();
        SectionTD::new(SmoothMap::new(section_vars(base_vars), comps, Vec::new()))
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn rank(&self) -> usize {
        self.map.output_dim()
    }

    pub fn base_dim(&self) -> usize {
        self.map.input_dim() - 1
    }

    pub fn components(&self) -> &[Expr] {
        self.map.components()
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<DVector<f64>, EvalError> {
        let mut p = Vec::with_capacity(x.len() + 1);
        p.push(t);
        p.extend_from_slice(x);
        self.map.eval_vec(&p)
    }

    /// `a·self + b·other`.
    pub fn linear_combination(&self, a: f64, other: &SectionTD, b: f64) -> SectionTD {
        assert_eq!(self.rank(), other.rank());
        let comps = self
            .components()
            .iter()
            .zip(other.components())
            .map(|(u, v)| Expr::add(Expr::mul(Expr::Const(a), u.clone()), Expr::mul(Expr::Const(b), v.clone())))
            .collect();
        SectionTD::new(SmoothMap::new(self.map.vars().to_vec(), comps, Vec::new()))
    }
}

/// The base vector field `ρ(x) s(t, x)` of a section.
pub struct AnchoredSection<'a> {
    algebroid: &'a LieAlgebroid,
    section: &'a SectionTD,
}

impl<'a> AnchoredSection<'a> {
    pub fn new(algebroid: &'a LieAlgebroid, section: &'a SectionTD) -> Self {
        assert_eq!(algebroid.rank(), section.rank(), "section rank");
        assert_eq!(algebroid.base_dim(), section.base_dim(), "section base dimension");
        AnchoredSection { algebroid, section }
    }
}

impl VectorField for AnchoredSection<'_> {
    fn dim(&self) -> usize {
        self.algebroid.base_dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        let v = self.algebroid.anchor_at(x)? * self.section.eval(t, x)?;
        out.copy_from_slice(v.as_slice());
        Ok(())
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        self.algebroid.in_domain(x)
    }
}

/// `["t", base...]`, renaming the time variable if a base coordinate is
/// already called `t`.
pub fn section_vars(base_vars: &[String]) -> Vec<String> {
    let mut time = String::from("t");
    while base_vars.contains(&time) {
        time.push('_');
    }
    let mut vars = vec![time];
    vars.extend_from_slice(base_vars);
    vars
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_in;

    fn so3_constants(perturb: Option<(usize, usize, usize, f64)>) -> Vec<Vec<Vec<f64>>> {
        let mut c = vec![vec![vec![0.0; 3]; 3]; 3];
        for (k, i, j) in [(2, 0, 1), (0, 1, 2), (1, 2, 0)] {
            c[k][i][j] = 1.0;
            c[k][j][i] = -1.0;
        }
        if let Some((k, i, j, d)) = perturb {
            c[k][i][j] += d;
            c[k][j][i] -= d;
        }
        c
    }

    #[test]
    fn tangent_identity_anchor_zero_bracket() {
        let t = LieAlgebroid::tangent(2);
        for x in [[0.0, 0.0], [3.0, -1.5]] {
            assert_eq!(t.anchor_at(&x).unwrap(), DMatrix::identity(2, 2));
            assert_eq!(t.bracket_at(&x).unwrap().max_abs(), 0.0);
        }
        let t3 = LieAlgebroid::tangent(3);
        let pts = t3.sample_domain(1, 20, 5.0).unwrap();
        let rep = t3.check_axioms(&pts).unwrap();
        assert_eq!(rep.max(), 0.0);
    }

    #[test]
    fn so3_accepted_and_perturbations() {
        let so3 = LieAlgebroid::lie_algebra(&so3_constants(None)).unwrap();
        assert!(so3.is_over_point());
        assert_eq!(so3.check_axioms(&[vec![0.3]]).unwrap().max(), 0.0);
        // c^1_{12} += 0.1 breaks Jacobi; c^1_{23} alone rescales a generator
        // and keeps it.
        assert!(matches!(
            LieAlgebroid::lie_algebra(&so3_constants(Some((0, 0, 1, 0.1)))),
            Err(AlgebroidError::Jacobi { .. })
        ));
        assert!(structure_constant_jacobi(&so3_constants(Some((0, 1, 2, 0.1)))) < 1e-15);
        assert!(LieAlgebroid::lie_algebra(&vec![vec![vec![0.0; 2]; 2]; 2]).is_ok());
    }

    #[test]
    fn overwritten_tangent_bracket_breaks_anchor_morphism() {
        let bad = LieAlgebroid::tangent(2)
            .with_bracket_entry(0, 0, 1, Expr::Const(1.0))
            .unwrap();
        let pts = bad.sample_domain(3, 10, 2.0).unwrap();
        let rep = bad.check_axioms(&pts).unwrap();
        assert_eq!(rep.anchor_morphism, 1.0);
    }

    #[test]
    fn bracket_keys_validated() {
        let vars = default_names("x", 2);
        let anchor = vec![vec!["1".into(), "0".into()], vec!["0".into(), "1".into()]];
        let err = LieAlgebroid::parse(&vars, &anchor, 2, &[((1, 2, 2), "1".into())], &[]);
        assert!(matches!(err, Err(AlgebroidError::BracketKey { .. })));
        let err = LieAlgebroid::parse(&vars, &anchor, 2, &[((1, 2, 1), "1".into())], &[]);
        assert!(matches!(err, Err(AlgebroidError::BracketKey { .. })));
    }

    #[test]
    fn section_differential() {
        let vars = default_names("x", 2);
        let f = parse_in("x1^2*x2", &["x1", "x2"]).unwrap();
        let s = SectionTD::differential(&vars, &f);
        let v = s.eval(0.5, &[2.0, 3.0]).unwrap();
        assert_eq!(v.as_slice(), &[12.0, 4.0]);
    }
}
