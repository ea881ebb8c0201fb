//! Sampled A-paths and A-homotopies, their residuals, and path development
//! in matrix Lie groups.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::algebroid::{AnchoredSection, LieAlgebroid, SectionTD};
use crate::expr::EvalError;
use crate::numkernel::{self, interpolate, FlowError, FlowStatus, Interpolation};

/// Tolerance for matching path endpoints in [`APath::concat`].
pub const CONCAT_TOL: f64 = 1e-9;
/// Tolerance for the boundary conditions of an [`AHomotopy`].
pub const HOMOTOPY_BOUNDARY_TOL: f64 = 1e-6;
/// Largest admissible distance of `γ⁻¹γ̇` from the span of a basis.
pub const SPAN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Error)]
pub enum PathError {
    #[error("path needs at least two samples")]
    TooShort,
    #[error("sample {index} has dimension {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("sample {index} at {point:?} lies outside the algebroid's domain")]
    OutsideDomain { index: usize, point: Vec<f64> },
    #[error("endpoint mismatch: first path ends at {end:?}, second starts at {start:?}")]
    EndpointMismatch { end: Vec<f64>, start: Vec<f64> },
    #[error("paths are over different algebroids")]
    DifferentAlgebroids,
    #[error("paths have different grid sizes ({0} vs {1})")]
    GridMismatch(usize, usize),
    #[error("integration stopped: {status}")]
    Incomplete {
        status: FlowStatus,
        /// Samples up to the last accepted grid point.
        partial_base: Vec<Vec<f64>>,
    },
    #[error("homotopy boundary condition violated: {0}")]
    Boundary(String),
    #[error("basis has {basis} elements but the algebroid has rank {rank}")]
    RankMismatch { basis: usize, rank: usize },
    #[error("path is not over a Lie algebra")]
    NotOverPoint,
    #[error("matrix path is singular at sample {0}")]
    Singular(usize),
    #[error("γ⁻¹γ' leaves the span of the basis by {residual:e} at sample {index}")]
    OutsideSpan { index: usize, residual: f64 },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// A-path `(x(t), η(t))` sampled on the uniform grid `t_k = k/N`.
#[derive(Debug, Clone)]
pub struct APath {
    algebroid: Arc<LieAlgebroid>,
    base: Vec<DVector<f64>>,
    fiber: Vec<DVector<f64>>,
    /// Grid indices where the path is only piecewise smooth.
    junctions: Vec<usize>,
}

fn dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm()
}

impl APath {
    pub fn new(
        algebroid: Arc<LieAlgebroid>,
        base: Vec<DVector<f64>>,
        fiber: Vec<DVector<f64>>,
    ) -> Result<Self, PathError> {
        if base.len() < 2 || base.len() != fiber.len() {
            return Err(PathError::TooShort);
        }
        let (n, r) = (algebroid.base_dim(), algebroid.rank());
        for (index, (x, e)) in base.iter().zip(&fiber).enumerate() {
            if x.len() != n {
                return Err(PathError::Dimension {
                    index,
                    expected: n,
                    got: x.len(),
                });
            }
            if e.len() != r {
                return Err(PathError::Dimension {
                    index,
                    expected: r,
                    got: e.len(),
                });
            }
            if !algebroid.in_domain(x.as_slice()) {
                return Err(PathError::OutsideDomain {
                    index,
                    point: x.as_slice().to_vec(),
                });
            }
        }
        Ok(APath {
            algebroid,
            base,
            fiber,
            junctions: Vec::new(),
        })
    }

    /// Unit path at `x`: constant base, zero fiber.
    pub fn constant(algebroid: Arc<LieAlgebroid>, x: &[f64], n: usize) -> Result<Self, PathError> {
        let r = algebroid.rank();
        let base = vec![DVector::from_column_slice(x); n + 1];
        APath::new(algebroid, base, vec![DVector::zeros(r); n + 1])
    }

    /// Sample `t ↦ (x(t), η(t))` on `N + 1` grid points.
    pub fn from_fn(
        algebroid: Arc<LieAlgebroid>,
        n: usize,
        f: impl Fn(f64) -> (Vec<f64>, Vec<f64>),
    ) -> Result<Self, PathError> {
        let (base, fiber) = (0..=n)
            .map(|k| {
                let (x, e) = f(k as f64 / n as f64);
                (DVector::from_vec(x), DVector::from_vec(e))
            })
            .unzip();
        APath::new(algebroid, base, fiber)
    }

    pub fn algebroid(&self) -> &Arc<LieAlgebroid> {
        &self.algebroid
    }

    /// Number of grid intervals `N`.
    pub fn intervals(&self) -> usize {
        self.base.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.intervals() as f64
    }

    pub fn base(&self) -> &[DVector<f64>] {
        &self.base
    }

    pub fn fiber(&self) -> &[DVector<f64>] {
        &self.fiber
    }

    pub fn junctions(&self) -> &[usize] {
        &self.junctions
    }

    pub fn source(&self) -> &DVector<f64> {
        &self.base[0]
    }

    pub fn target(&self) -> &DVector<f64> {
        self.base.last().unwrap()
    }

    /// Max over interior, non-junction grid points of `|ẋ − ρ(x)η|`, with
    /// `ẋ` by central differences.
    pub fn admissibility_residual(&self) -> Result<f64, EvalError> {
        let n = self.intervals();
        let h = 1.0 / n as f64;
        let mut worst = 0.0f64;
        for k in 1..n {
            if self.junctions.contains(&k) {
                continue;
            }
            let xdot = (&self.base[k + 1] - &self.base[k - 1]) / (2.0 * h);
            let rho = self.algebroid.anchor_at(self.base[k].as_slice())?;
            worst = worst.max((xdot - rho * &self.fiber[k]).norm());
        }
        Ok(worst)
    }

    /// `gg'`: traverses `g` then `g'` at double speed on `[0, 1/2]` and
    /// `[1/2, 1]`, fibers doubled. Both paths must share a grid size `N`; the
    /// result has `2N` intervals with a junction at the midpoint.
    pub fn concat(&self, other: &APath) -> Result<APath, PathError> {
        if !Arc::ptr_eq(&self.algebroid, &other.algebroid) {
            return Err(PathError::DifferentAlgebroids);
        }
        if self.intervals() != other.intervals() {
            return Err(PathError::GridMismatch(self.intervals(), other.intervals()));
        }
        if dist(self.target(), other.source()) > CONCAT_TOL {
            return Err(PathError::EndpointMismatch {
                end: self.target().as_slice().to_vec(),
                start: other.source().as_slice().to_vec(),
            });
        }
        let n = self.intervals();
        let mut base = self.base.clone();
        base.extend(other.base[1..].iter().cloned());
        let mut fiber: Vec<DVector<f64>> = self.fiber.iter().map(|e| e * 2.0).collect();
        // The junction sample carries the first path's fiber: the concatenated
        // path is only piecewise smooth there.
        fiber.extend(other.fiber[1..].iter().map(|e| e * 2.0));
        let mut junctions: Vec<usize> = self.junctions.clone();
        junctions.push(n);
        junctions.extend(other.junctions.iter().map(|j| j + n));
        Ok(APath {
            algebroid: self.algebroid.clone(),
            base,
            fiber,
            junctions,
        })
    }

    /// CSV with header `t,x1..xn,eta1..etar`.
    pub fn to_csv(&self) -> String {
        let (n, r) = (self.algebroid.base_dim(), self.algebroid.rank());
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for a in 1..=r {
            out.push_str(&format!(",eta{a}"));
        }
        out.push('\n');
        for k in 0..self.base.len() {
            out.push_str(&self.time(k).to_string());
            for v in self.base[k].iter().chain(self.fiber[k].iter()) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Parse CSV written by [`APath::to_csv`]; `#` lines are ignored. The
    /// time column must be the uniform grid.
    pub fn from_csv(algebroid: Arc<LieAlgebroid>, text: &str) -> Result<APath, PathError> {
        let (n, r) = (algebroid.base_dim(), algebroid.rank());
        let rows = parse_rows(text, 1 + n + r)?;
        let count = rows.len();
        if count < 2 {
            return Err(PathError::TooShort);
        }
        let mut base = Vec::with_capacity(count);
        let mut fiber = Vec::with_capacity(count);
        for (k, row) in rows.iter().enumerate() {
            let expected = k as f64 / (count - 1) as f64;
            if (row[0] - expected).abs() > 1e-9 {
                return Err(PathError::Csv(format!("row {k}: time {} is off the uniform grid", row[0])));
            }
            base.push(DVector::from_column_slice(&row[1..1 + n]));
            fiber.push(DVector::from_column_slice(&row[1 + n..]));
        }
        APath::new(algebroid, base, fiber)
    }
}

fn parse_rows(text: &str, width: usize) -> Result<Vec<Vec<f64>>, PathError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| PathError::Csv("empty input".into()))?;
    if header.split(',').count() != width {
        return Err(PathError::Csv(format!(
            "header has {} columns, expected {width}",
            header.split(',').count()
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PathError::Csv(format!("row {i}: {e}")))?;
            if row.len() != width {
                return Err(PathError::Csv(format!("row {i} has {} columns, expected {width}", row.len())));
            }
            Ok(row)
        })
        .collect()
}

/// Integrate `ẋ = ρ(x) s(t, x)` on `N` RK4 steps over `[0, 1]` and set
/// `η_k = s(t_k, x_k)`.
pub fn integrate_apath(
    algebroid: Arc<LieAlgebroid>,
    section: &SectionTD,
    x0: &[f64],
    n: usize,
) -> Result<APath, PathError> {
    let field = AnchoredSection::new(&algebroid, section);
    let tr = numkernel::flow(&field, x0, (0.0, 1.0), 1.0 / n as f64, numkernel::DEFAULT_BOUND)?;
    if !tr.status.is_completed() {
        return Err(PathError::Incomplete {
            status: tr.status,
            partial_base: tr.points,
        });
    }
    let fiber = tr
        .times
        .iter()
        .zip(&tr.points)
        .map(|(&t, x)| section.eval(t, x))
        .collect::<Result<Vec<_>, _>>()?;
    let base = tr.points.into_iter().map(DVector::from_vec).collect();
    APath::new(algebroid, base, fiber)
}

/// A-homotopy `(x, η, β)(t, s)` on the grid `t_k = k/N_t`, `s_l = l/N_s`.
#[derive(Debug, Clone)]
pub struct AHomotopy {
    algebroid: Arc<LieAlgebroid>,
    nt: usize,
    ns: usize,
    /// Indexed `l * (nt + 1) + k`.
    x: Vec<DVector<f64>>,
    eta: Vec<DVector<f64>>,
    beta: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HomotopyResidual {
    /// `max |∂_s x − ρ(x)β|`
    pub x: f64,
    /// `max |∂_s η − ∂_t β − f(β, η)|`
    pub eta: f64,
}

impl HomotopyResidual {
    pub fn max(&self) -> f64 {
        self.x.max(self.eta)
    }
}

impl AHomotopy {
    /// Build from slices indexed `[l][k]` (s-major). Checks that `β` vanishes
    /// at `t = 0, 1` and the base endpoints are constant in `s`.
    pub fn new(
        algebroid: Arc<LieAlgebroid>,
        x: Vec<Vec<DVector<f64>>>,
        eta: Vec<Vec<DVector<f64>>>,
        beta: Vec<Vec<DVector<f64>>>,
    ) -> Result<Self, PathError> {
        let ns = x.len().checked_sub(1).ok_or(PathError::TooShort)?;
        let nt = x[0].len().checked_sub(1).ok_or(PathError::TooShort)?;
        if ns == 0 || nt == 0 {
            return Err(PathError::TooShort);
        }
        let (n, r) = (algebroid.base_dim(), algebroid.rank());
        for l in 0..=ns {
            if x[l].len() != nt + 1 || eta[l].len() != nt + 1 || beta[l].len() != nt + 1 {
                return Err(PathError::GridMismatch(nt + 1, x[l].len()));
            }
            for k in 0..=nt {
                let index = l * (nt + 1) + k;
                for (v, expected) in [(&x[l][k], n), (&eta[l][k], r), (&beta[l][k], r)] {
                    if v.len() != expected {
                        return Err(PathError::Dimension {
                            index,
                            expected,
                            got: v.len(),
                        });
                    }
                }
                if !algebroid.in_domain(x[l][k].as_slice()) {
                    return Err(PathError::OutsideDomain {
                        index,
                        point: x[l][k].as_slice().to_vec(),
                    });
                }
            }
            for k in [0, nt] {
                if beta[l][k].norm() > HOMOTOPY_BOUNDARY_TOL {
                    return Err(PathError::Boundary(format!(
                        "β(t={}, s={}) = {:?} is nonzero",
                        k as f64 / nt as f64,
                        l as f64 / ns as f64,
                        beta[l][k].as_slice()
                    )));
                }
                if dist(&x[l][k], &x[0][k]) > HOMOTOPY_BOUNDARY_TOL {
                    return Err(PathError::Boundary(format!(
                        "base endpoint at t={} moves with s",
                        k as f64 / nt as f64
                    )));
                }
            }
        }
        Ok(AHomotopy {
            algebroid,
            nt,
            ns,
            x: x.into_iter().flatten().collect(),
            eta: eta.into_iter().flatten().collect(),
            beta: beta.into_iter().flatten().collect(),
        })
    }

    /// Sample `(t, s) ↦ (x, η, β)` on an `N_t × N_s` grid.
    pub fn from_fn(
        algebroid: Arc<LieAlgebroid>,
        nt: usize,
        ns: usize,
        f: impl Fn(f64, f64) -> (Vec<f64>, Vec<f64>, Vec<f64>),
    ) -> Result<Self, PathError> {
        let mut x = Vec::with_capacity(ns + 1);
        let mut eta = Vec::with_capacity(ns + 1);
        let mut beta = Vec::with_capacity(ns + 1);
        for l in 0..=ns {
            let (mut xs, mut es, mut bs) = (Vec::new(), Vec::new(), Vec::new());
            for k in 0..=nt {
                let (a, b, c) = f(k as f64 / nt as f64, l as f64 / ns as f64);
                xs.push(DVector::from_vec(a));
                es.push(DVector::from_vec(b));
                bs.push(DVector::from_vec(c));
            }
            x.push(xs);
            eta.push(es);
            beta.push(bs);
        }
        AHomotopy::new(algebroid, x, eta, beta)
    }

    pub fn algebroid(&self) -> &Arc<LieAlgebroid> {
        &self.algebroid
    }

    pub fn t_intervals(&self) -> usize {
        self.nt
    }

    pub fn s_intervals(&self) -> usize {
        self.ns
    }

    fn idx(&self, k: usize, l: usize) -> usize {
        l * (self.nt + 1) + k
    }

    pub fn x(&self, k: usize, l: usize) -> &DVector<f64> {
        &self.x[self.idx(k, l)]
    }

    pub fn eta(&self, k: usize, l: usize) -> &DVector<f64> {
        &self.eta[self.idx(k, l)]
    }

    pub fn beta(&self, k: usize, l: usize) -> &DVector<f64> {
        &self.beta[self.idx(k, l)]
    }

    /// The A-path at `s = s_l`.
    pub fn slice(&self, l: usize) -> APath {
        let range = self.idx(0, l)..=self.idx(self.nt, l);
        APath {
            algebroid: self.algebroid.clone(),
            base: self.x[range.clone()].to_vec(),
            fiber: self.eta[range].to_vec(),
            junctions: Vec::new(),
        }
    }

    /// Max over the interior grid of both homotopy equation residuals, with
    /// central differences in `t` and `s`.
    pub fn homotopy_residual(&self) -> Result<HomotopyResidual, EvalError> {
        let (ht, hs) = (1.0 / self.nt as f64, 1.0 / self.ns as f64);
        let mut res = HomotopyResidual { x: 0.0, eta: 0.0 };
        for l in 1..self.ns {
            for k in 1..self.nt {
                let x = self.x(k, l);
                let rho = self.algebroid.anchor_at(x.as_slice())?;
                let f = self.algebroid.bracket_at(x.as_slice())?;
                let beta = self.beta(k, l);
                let dxs = (self.x(k, l + 1) - self.x(k, l - 1)) / (2.0 * hs);
                res.x = res.x.max((dxs - rho * beta).norm());
                let des = (self.eta(k, l + 1) - self.eta(k, l - 1)) / (2.0 * hs);
                let dbt = (self.beta(k + 1, l) - self.beta(k - 1, l)) / (2.0 * ht);
                let e = des - dbt - f.apply(beta, self.eta(k, l));
                res.eta = res.eta.max(e.norm());
            }
        }
        Ok(res)
    }

    /// Long-form CSV `t,s,x1..xn,eta1..etar,beta1..betar`.
    pub fn to_csv(&self) -> String {
        let (n, r) = (self.algebroid.base_dim(), self.algebroid.rank());
        let mut out = String::from("t,s");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for a in 1..=r {
            out.push_str(&format!(",eta{a}"));
        }
        for a in 1..=r {
            out.push_str(&format!(",beta{a}"));
        }
        out.push('\n');
        for l in 0..=self.ns {
            for k in 0..=self.nt {
                out.push_str(&format!("{},{}", k as f64 / self.nt as f64, l as f64 / self.ns as f64));
                for v in self.x(k, l).iter().chain(self.eta(k, l).iter()).chain(self.beta(k, l).iter()) {
                    out.push(',');
                    out.push_str(&v.to_string());
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parse CSV written by [`AHomotopy::to_csv`] (rows s-major).
    pub fn from_csv(algebroid: Arc<LieAlgebroid>, text: &str) -> Result<AHomotopy, PathError> {
        let (n, r) = (algebroid.base_dim(), algebroid.rank());
        let rows = parse_rows(text, 2 + n + 2 * r)?;
        let nt = rows.iter().take_while(|row| row[1] == rows[0][1]).count();
        if nt < 2 || rows.len() % nt != 0 {
            return Err(PathError::Csv("rows do not form a rectangular (t, s) grid".into()));
        }
        let mut x = Vec::new();
        let mut eta = Vec::new();
        let mut beta = Vec::new();
        for chunk in rows.chunks(nt) {
            x.push(chunk.iter().map(|row| DVector::from_column_slice(&row[2..2 + n])).collect());
            eta.push(chunk.iter().map(|row| DVector::from_column_slice(&row[2 + n..2 + n + r])).collect());
            beta.push(chunk.iter().map(|row| DVector::from_column_slice(&row[2 + n + r..])).collect());
        }
        AHomotopy::new(algebroid, x, eta, beta)
    }
}

/// Sampled path `γ(t_k)` in a matrix group, `t_k = k/N`.
#[derive(Debug, Clone)]
pub struct MatrixPath {
    pub samples: Vec<DMatrix<f64>>,
}

impl MatrixPath {
    pub fn intervals(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn last(&self) -> &DMatrix<f64> {
        self.samples.last().unwrap()
    }

    /// CSV `t,g11,g12,...` with entries row-major.
    pub fn to_csv(&self) -> String {
        let m = self.samples[0].nrows();
        let mut out = String::from("t");
        for i in 1..=m {
            for j in 1..=m {
                out.push_str(&format!(",g{i}{j}"));
            }
        }
        out.push('\n');
        let n = self.intervals();
        for (k, g) in self.samples.iter().enumerate() {
            out.push_str(&(k as f64 / n as f64).to_string());
            for i in 0..m {
                for j in 0..m {
                    out.push(',');
                    out.push_str(&g[(i, j)].to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of [`MatrixPath::to_csv`] for `m × m` samples.
    pub fn from_csv(m: usize, text: &str) -> Result<MatrixPath, PathError> {
        let rows = parse_rows(text, 1 + m * m)?;
        if rows.len() < 2 {
            return Err(PathError::TooShort);
        }
        let n = rows.len() - 1;
        let samples = rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                if (row[0] - k as f64 / n as f64).abs() > 1e-9 {
                    return Err(PathError::Csv(format!("row {k}: time {} is off the uniform grid", row[0])));
                }
                Ok(DMatrix::from_row_slice(m, m, &row[1..]))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MatrixPath { samples })
    }
}

fn check_basis(basis: &[DMatrix<f64>], algebroid: &LieAlgebroid) -> Result<(), PathError> {
    if !algebroid.is_over_point() {
        return Err(PathError::NotOverPoint);
    }
    if basis.len() != algebroid.rank() {
        return Err(PathError::RankMismatch {
            basis: basis.len(),
            rank: algebroid.rank(),
        });
    }
    Ok(())
}

fn combine(basis: &[DMatrix<f64>], coeffs: &DVector<f64>) -> DMatrix<f64> {
    let m = basis[0].nrows();
    basis
        .iter()
        .zip(coeffs.iter())
        .fold(DMatrix::zeros(m, m), |acc, (e, c)| acc + e * *c)
}

/// Solve `γ̇ = γ · η^a(t) E_a`, `γ(0) = I`, by RK4 on the path's grid, with
/// `η` interpolated cubically at the half steps.
pub fn develop(basis: &[DMatrix<f64>], g: &APath) -> Result<MatrixPath, PathError> {
    check_basis(basis, g.algebroid())?;
    let n = g.intervals();
    let h = 1.0 / n as f64;
    let m = basis[0].nrows();
    let xi = |t: f64| combine(basis, &interpolate(g.fiber(), t, Interpolation::Cubic));
    let mut samples = Vec::with_capacity(n + 1);
    let mut gamma = DMatrix::<f64>::identity(m, m);
    samples.push(gamma.clone());
    for k in 0..n {
        let t = k as f64 * h;
        let a0 = combine(basis, &g.fiber()[k]);
        let a1 = xi(t + 0.5 * h);
        let a2 = combine(basis, &g.fiber()[k + 1]);
        let k1 = &gamma * &a0;
        let k2 = (&gamma + &k1 * (0.5 * h)) * &a1;
        let k3 = (&gamma + &k2 * (0.5 * h)) * &a1;
        let k4 = (&gamma + &k3 * h) * &a2;
        gamma += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        samples.push(gamma.clone());
    }
    Ok(MatrixPath { samples })
}

/// `η(t)` = coordinates of `γ⁻¹γ̇` in `basis`, as an A-path of `algebroid`
/// (a Lie algebra). `γ̇` uses central differences inside and one-sided
/// second-order stencils at the ends.
pub fn log_derivative(
    gamma: &MatrixPath,
    basis: &[DMatrix<f64>],
    algebroid: Arc<LieAlgebroid>,
) -> Result<APath, PathError> {
    check_basis(basis, &algebroid)?;
    let n = gamma.intervals();
    if n < 4 {
        return Err(PathError::TooShort);
    }
    let h = 1.0 / n as f64;
    let m = basis[0].nrows();
    let r = basis.len();
    let mut design = DMatrix::zeros(m * m, r);
    for (a, e) in basis.iter().enumerate() {
        design.column_mut(a).copy_from_slice(e.as_slice());
    }
    let svd = design.clone().svd(true, true);
    let g = &gamma.samples;
    let mut fiber = Vec::with_capacity(n + 1);
    for k in 0..=n {
        // Fourth-order stencils, one-sided near the ends.
        let (start, weights): (usize, [f64; 5]) = match k {
            0 => (0, [-25.0, 48.0, -36.0, 16.0, -3.0]),
            1 => (0, [-3.0, -10.0, 18.0, -6.0, 1.0]),
            _ if k == n - 1 => (n - 4, [-1.0, 6.0, -18.0, 10.0, 3.0]),
            _ if k == n => (n - 4, [3.0, -16.0, 36.0, -48.0, 25.0]),
            _ => (k - 2, [1.0, -8.0, 0.0, 8.0, -1.0]),
        };
        let mut dot = DMatrix::zeros(m, m);
        for (i, w) in weights.iter().enumerate() {
            dot += &g[start + i] * *w;
        }
        dot /= 12.0 * h;
        let inv = g[k].clone().try_inverse().ok_or(PathError::Singular(k))?;
        let xi = inv * dot;
        let target = DVector::from_column_slice(xi.as_slice());
        let coeffs = svd.solve(&target, 1e-12).map_err(|_| PathError::Singular(k))?;
        let residual = (&design * &coeffs - &target).norm();
        if residual > SPAN_TOL {
            return Err(PathError::OutsideSpan { index: k, residual });
        }
        fiber.push(coeffs);
    }
    let base = vec![DVector::zeros(algebroid.base_dim()); n + 1];
    APath::new(algebroid, base, fiber)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::default_names;
    use std::f64::consts::FRAC_PI_2;

    fn tangent2() -> Arc<LieAlgebroid> {
        Arc::new(LieAlgebroid::tangent(2))
    }

    #[test]
    fn straight_line_on_tangent() {
        let a = tangent2();
        let s = SectionTD::constant(&default_names("x", 2), &[1.0, 0.0]);
        let g = integrate_apath(a, &s, &[0.0, 0.0], 100).unwrap();
        for (k, x) in g.base().iter().enumerate() {
            assert!((x[0] - g.time(k)).abs() < 1e-14 && x[1] == 0.0);
            assert_eq!(g.fiber()[k].as_slice(), &[1.0, 0.0]);
        }
        assert!(g.admissibility_residual().unwrap() < 1e-12);
    }

    #[test]
    fn zero_section_gives_unit_path() {
        let a = tangent2();
        let s = SectionTD::zero(&default_names("x", 2), 2);
        let g = integrate_apath(a.clone(), &s, &[0.3, -0.2], 50).unwrap();
        assert!(g.base().iter().all(|x| x.as_slice() == [0.3, -0.2]));
        assert_eq!(g.admissibility_residual().unwrap(), 0.0);
        let c = APath::constant(a, &[1.0, 1.0], 10).unwrap();
        assert_eq!(c.admissibility_residual().unwrap(), 0.0);
    }

    #[test]
    fn residual_of_unlifted_motion_is_speed() {
        let g = APath::from_fn(tangent2(), 20, |t| (vec![3.0 * t, 4.0 * t], vec![0.0, 0.0])).unwrap();
        assert!((g.admissibility_residual().unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn concat_l_shape() {
        let a = tangent2();
        let g1 = APath::from_fn(a.clone(), 10, |t| (vec![t, 0.0], vec![1.0, 0.0])).unwrap();
        let g2 = APath::from_fn(a.clone(), 10, |t| (vec![1.0, t], vec![0.0, 1.0])).unwrap();
        let g = g1.concat(&g2).unwrap();
        assert_eq!(g.intervals(), 20);
        assert_eq!(g.source(), g1.source());
        assert_eq!(g.target(), g2.target());
        assert_eq!(g.fiber()[3].as_slice(), &[2.0, 0.0]);
        assert_eq!(g.fiber()[15].as_slice(), &[0.0, 2.0]);
        assert_eq!(g.junctions(), &[10]);
        assert!(g.admissibility_residual().unwrap() < 1e-12);
        assert!(matches!(g2.concat(&g1), Err(PathError::EndpointMismatch { .. })));
        let unit = APath::constant(a, g1.target().as_slice(), 10).unwrap();
        assert_eq!(g1.concat(&unit).unwrap().target(), g1.target());
    }

    #[test]
    fn csv_round_trip() {
        let g = APath::from_fn(tangent2(), 8, |t| (vec![t, t * t], vec![1.0, 2.0 * t])).unwrap();
        let back = APath::from_csv(g.algebroid().clone(), &g.to_csv()).unwrap();
        assert_eq!(back.intervals(), 8);
        for k in 0..=8 {
            assert!((&back.base()[k] - &g.base()[k]).norm() < 1e-15);
            assert!((&back.fiber()[k] - &g.fiber()[k]).norm() < 1e-15);
        }
    }

    fn test_homotopy(n: usize, zero_beta2: bool) -> AHomotopy {
        AHomotopy::from_fn(tangent2(), n, n, |t, s| {
            let b = if zero_beta2 { 0.0 } else { t * (1.0 - t) };
            (vec![t, s * t * (1.0 - t)], vec![1.0, s * (1.0 - 2.0 * t)], vec![0.0, b])
        })
        .unwrap()
    }

    #[test]
    fn closed_form_homotopy() {
        let r = test_homotopy(200, false).homotopy_residual().unwrap();
        assert!(r.max() <= 1e-4, "{r:?}");
        let r = test_homotopy(200, true).homotopy_residual().unwrap();
        assert!((r.x - 0.25).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn homotopy_boundary_checked() {
        let bad = AHomotopy::from_fn(tangent2(), 10, 10, |t, s| (vec![t, s], vec![1.0, 0.0], vec![0.0, 0.0]));
        assert!(matches!(bad, Err(PathError::Boundary(_))));
        let bad = AHomotopy::from_fn(tangent2(), 10, 10, |t, _| (vec![t, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]));
        assert!(matches!(bad, Err(PathError::Boundary(_))));
    }

    #[test]
    fn homotopy_csv_round_trip() {
        let h = test_homotopy(6, false);
        let back = AHomotopy::from_csv(h.algebroid().clone(), &h.to_csv()).unwrap();
        assert_eq!((back.t_intervals(), back.s_intervals()), (6, 6));
        assert!((back.beta(3, 2) - h.beta(3, 2)).norm() < 1e-15);
    }

    fn so2() -> (Vec<DMatrix<f64>>, Arc<LieAlgebroid>) {
        let e = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        (vec![e], Arc::new(LieAlgebroid::lie_algebra(&[vec![vec![0.0]]]).unwrap()))
    }

    #[test]
    fn quarter_rotation() {
        let (basis, alg) = so2();
        let g = APath::from_fn(alg, 1000, |_| (vec![0.0], vec![FRAC_PI_2])).unwrap();
        let gamma = develop(&basis, &g).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((gamma.last() - expected).amax() <= 1e-8);
    }

    #[test]
    fn zero_fiber_develops_to_identity() {
        let (basis, alg) = so2();
        let g = APath::constant(alg, &[0.0], 10).unwrap();
        let gamma = develop(&basis, &g).unwrap();
        assert!(gamma.samples.iter().all(|m| *m == DMatrix::identity(2, 2)));
        let back = log_derivative(&gamma, &basis, g.algebroid().clone()).unwrap();
        assert!(back.fiber().iter().all(|e| e[0] == 0.0));
    }

    #[test]
    fn hyperbolic_log_derivative() {
        let basis = vec![DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))];
        let alg = Arc::new(LieAlgebroid::lie_algebra(&[vec![vec![0.0]]]).unwrap());
        let n = 1000;
        let gamma = MatrixPath {
            samples: (0..=n)
                .map(|k| {
                    let t = k as f64 / n as f64;
                    DMatrix::from_diagonal(&DVector::from_vec(vec![t.exp(), (-t).exp()]))
                })
                .collect(),
        };
        let g = log_derivative(&gamma, &basis, alg).unwrap();
        assert!(g.fiber().iter().all(|e| (e[0] - 1.0).abs() < 1e-5));
    }

    #[test]
    fn non_span_rejected() {
        let (basis, alg) = so2();
        let gamma = MatrixPath {
            samples: (0..=10)
                .map(|k| DMatrix::identity(2, 2) * (1.0 + k as f64 / 10.0))
                .collect(),
        };
        assert!(matches!(
            log_derivative(&gamma, &basis, alg),
            Err(PathError::OutsideSpan { .. })
        ));
    }

    #[test]
    fn matrix_csv_round_trip() {
        let p = MatrixPath {
            samples: (0..=4)
                .map(|k| DMatrix::from_row_slice(2, 2, &[1.0, k as f64 * 0.25, -0.5, 2.0 + k as f64]))
                .collect(),
        };
        let q = MatrixPath::from_csv(2, &p.to_csv()).unwrap();
        assert_eq!(q.samples, p.samples);
        assert!(MatrixPath::from_csv(3, &p.to_csv()).is_err());
    }
}
