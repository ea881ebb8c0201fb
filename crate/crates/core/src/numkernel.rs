//! Fixed-step RK4 integration of time-dependent vector fields.
//!
//! Integration stops early with [`FlowStatus::Blowup`] when the state leaves
//! the ball of radius `bound` (or the field stops being finite), and with
//! [`FlowStatus::DomainExit`] when the state leaves the field's domain. Exit
//! times are located by bisection along the last segment.

use std::fmt;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, SmoothMap};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_BOUND: f64 = 1e8;
const EXIT_TIME_RESOLUTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldError {
    /// The point is outside the field's domain.
    Domain,
    /// The field is not finite at the point.
    NonFinite,
}

impl From<EvalError> for FieldError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Domain { .. } => FieldError::Domain,
            _ => FieldError::NonFinite,
        }
    }
}

/// A time-dependent vector field on an open subset of `R^n`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), FieldError>;

    fn in_domain(&self, _x: &[f64]) -> bool {
        true
    }
}

/// An autonomous field given by a smooth map `R^n ⊃ U -> R^n`.
impl VectorField for SmoothMap {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        let v = SmoothMap::eval(self, x)?;
        out.copy_from_slice(&v);
        Ok(())
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        SmoothMap::in_domain(self, x)
    }
}

/// Closure-backed field on all of `R^n`.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        (self.f)(t, x, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(FieldError::NonFinite)
        }
    }
}

/// Closure-backed field restricted to the set where `domain` holds.
pub struct DomainField<F, D> {
    dim: usize,
    f: F,
    domain: D,
}

impl<F, D> DomainField<F, D>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<(), FieldError> + Sync,
    D: Fn(&[f64]) -> bool + Sync,
{
    pub fn new(dim: usize, f: F, domain: D) -> Self {
        DomainField { dim, f, domain }
    }
}

impl<F, D> VectorField for DomainField<F, D>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<(), FieldError> + Sync,
    D: Fn(&[f64]) -> bool + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        if !(self.domain)(x) {
            return Err(FieldError::Domain);
        }
        (self.f)(t, x, out)?;
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(FieldError::NonFinite)
        }
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        (self.domain)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowStatus {
    Completed,
    Blowup { t_star: f64 },
    DomainExit { t_star: f64 },
}

impl FlowStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, FlowStatus::Completed)
    }

    pub fn t_star(&self) -> Option<f64> {
        match self {
            FlowStatus::Completed => None,
            FlowStatus::Blowup { t_star } | FlowStatus::DomainExit { t_star } => Some(*t_star),
        }
    }
}

impl fmt::Display for FlowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowStatus::Completed => write!(f, "completed"),
            FlowStatus::Blowup { t_star } => write!(f, "blowup(t*={t_star})"),
            FlowStatus::DomainExit { t_star } => write!(f, "domain_exit(t*={t_star})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("initial point {0:?} is outside the field's domain")]
    InitialOutsideDomain(Vec<f64>),
    #[error("initial point has dimension {got}, field has dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid integration parameters: {0}")]
    InvalidParameters(String),
    #[error("flow did not complete: {0}")]
    NotCompleted(FlowStatus),
}

/// Sampled solution on a uniform grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub status: FlowStatus,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.points.last().expect("trajectory holds the initial point")
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// CSV with header `t,x1,...,xn` and a trailing `# status=...` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.dim() {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, p) in self.times.iter().zip(&self.points) {
            out.push_str(&t.to_string());
            for v in p {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out.push_str(&format!("# status={}\n", self.status));
        out
    }
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, k: &[f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + a * ki;
    }
}

/// One classical RK4 step.
pub fn rk4_step(vf: &dyn VectorField, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>, FieldError> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    vf.eval(t, x, &mut k1)?;
    axpy(&mut tmp, x, 0.5 * h, &k1);
    vf.eval(t + 0.5 * h, &tmp, &mut k2)?;
    axpy(&mut tmp, x, 0.5 * h, &k2);
    vf.eval(t + 0.5 * h, &tmp, &mut k3)?;
    axpy(&mut tmp, x, h, &k3);
    vf.eval(t + h, &tmp, &mut k4)?;
    Ok((0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Number of uniform steps covering `length` with steps no larger than `step`.
pub fn step_count(length: f64, step: f64) -> usize {
    ((length / step) - 1e-9).ceil().max(1.0) as usize
}

/// Bisect `λ ∈ [0, 1]` along the segment `a -> b` for the first point leaving
/// the domain; returns the time of the first failing point.
fn bisect_exit(vf: &dyn VectorField, t: f64, h: f64, a: &[f64], b: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut p = vec![0.0; a.len()];
    while (hi - lo) * h > EXIT_TIME_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        for i in 0..a.len() {
            p[i] = a[i] + mid * (b[i] - a[i]);
        }
        if vf.in_domain(&p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    t + hi * h
}

/// Integrate `vf` from `x0` over `t_span` with uniform steps of size at most
/// `step`, stopping on blowup (`|x| > bound` or a non-finite field) or exit
/// from the field's domain.
pub fn flow(
    vf: &dyn VectorField,
    x0: &[f64],
    t_span: (f64, f64),
    step: f64,
    bound: f64,
) -> Result<Trajectory, FlowError> {
    if x0.len() != vf.dim() {
        return Err(FlowError::Dimension {
            expected: vf.dim(),
            got: x0.len(),
        });
    }
    if !(step > 0.0) || !(bound > 0.0) || !(t_span.1 >= t_span.0) {
        return Err(FlowError::InvalidParameters(format!(
            "step={step}, bound={bound}, t_span={t_span:?}"
        )));
    }
    if !vf.in_domain(x0) {
        return Err(FlowError::InitialOutsideDomain(x0.to_vec()));
    }
    let (ta, tb) = t_span;
    let n = if tb > ta { step_count(tb - ta, step) } else { 0 };
    let h = if n > 0 { (tb - ta) / n as f64 } else { 0.0 };
    let mut times = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    times.push(ta);
    points.push(x0.to_vec());
    let mut status = FlowStatus::Completed;
    let mut scratch = vec![0.0; x0.len()];
    for k in 0..n {
        let t = ta + k as f64 * h;
        let t_next = if k + 1 == n { tb } else { ta + (k + 1) as f64 * h };
        let x = points.last().unwrap();
        match rk4_step(vf, t, x, h) {
            Ok(next) => {
                if !next.iter().all(|v| v.is_finite()) || norm(&next) > bound {
                    status = FlowStatus::Blowup { t_star: t_next };
                    break;
                }
                if !vf.in_domain(&next) {
                    let t_star = bisect_exit(vf, t, h, x, &next);
                    status = FlowStatus::DomainExit { t_star };
                    break;
                }
                times.push(t_next);
                points.push(next);
            }
            Err(FieldError::NonFinite) => {
                status = FlowStatus::Blowup { t_star: t_next };
                break;
            }
            Err(FieldError::Domain) => {
                // An RK stage left the domain; locate the exit along the
                // Euler segment from the last accepted point.
                let t_star = match vf.eval(t, x, &mut scratch) {
                    Ok(()) => {
                        let euler: Vec<f64> = x.iter().zip(&scratch).map(|(a, v)| a + h * v).collect();
                        if vf.in_domain(&euler) {
                            t_next
                        } else {
                            bisect_exit(vf, t, h, x, &euler)
                        }
                    }
                    Err(_) => t,
                };
                status = FlowStatus::DomainExit { t_star };
                break;
            }
        }
    }
    Ok(Trajectory {
        times,
        points,
        status,
    })
}

/// Observed convergence order of the flow endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ConvergenceOrder {
    /// Both errors vanish exactly.
    Exact,
    Observed(f64),
}

fn endpoint(
    vf: &dyn VectorField,
    x0: &[f64],
    t_span: (f64, f64),
    step: f64,
    bound: f64,
) -> Result<Vec<f64>, FlowError> {
    let tr = flow(vf, x0, t_span, step, bound)?;
    if !tr.status.is_completed() {
        return Err(FlowError::NotCompleted(tr.status));
    }
    Ok(tr.last().to_vec())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `log2` of the endpoint error ratio between steps `h` and `h/2`.
///
/// With a `reference` endpoint the errors are measured against it; without
/// one, the Richardson differences `|x_h - x_{h/2}|` and `|x_{h/2} - x_{h/4}|`
/// are used.
pub fn flow_endpoint_order(
    vf: &dyn VectorField,
    x0: &[f64],
    t_span: (f64, f64),
    h: f64,
    reference: Option<&[f64]>,
) -> Result<ConvergenceOrder, FlowError> {
    let bound = DEFAULT_BOUND;
    let a = endpoint(vf, x0, t_span, h, bound)?;
    let b = endpoint(vf, x0, t_span, h / 2.0, bound)?;
    let (e1, e2) = match reference {
        Some(r) => (distance(&a, r), distance(&b, r)),
        None => {
            let c = endpoint(vf, x0, t_span, h / 4.0, bound)?;
            (distance(&a, &b), distance(&b, &c))
        }
    };
    if e1 == 0.0 && e2 == 0.0 {
        return Ok(ConvergenceOrder::Exact);
    }
    Ok(ConvergenceOrder::Observed((e1 / e2).log2()))
}

/// How fiber data between grid samples is reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Linear,
    /// Four-point Lagrange interpolation; exact for cubics.
    Cubic,
}

/// Evaluate samples on the uniform grid `k / N`, `k = 0..=N`, at `t ∈ [0, 1]`.
pub fn interpolate(samples: &[DVector<f64>], t: f64, scheme: Interpolation) -> DVector<f64> {
    let n = samples.len() - 1;
    if n == 0 {
        return samples[0].clone();
    }
    let u = (t.clamp(0.0, 1.0)) * n as f64;
    let k = (u.floor() as usize).min(n - 1);
    match scheme {
        Interpolation::Linear => {
            let w = u - k as f64;
            &samples[k] * (1.0 - w) + &samples[k + 1] * w
        }
        Interpolation::Cubic => {
            if n < 3 {
                let w = u - k as f64;
                return &samples[k] * (1.0 - w) + &samples[k + 1] * w;
            }
            let start = k.saturating_sub(1).min(n - 3);
            let nodes: [usize; 4] = [start, start + 1, start + 2, start + 3];
            let mut out = DVector::zeros(samples[0].len());
            for (i, &ni) in nodes.iter().enumerate() {
                let mut w = 1.0;
                for (j, &nj) in nodes.iter().enumerate() {
                    if i != j {
                        w *= (u - nj as f64) / (ni as f64 - nj as f64);
                    }
                }
                out += &samples[ni] * w;
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let vf = FnField::new(1, |_, x, o| o[0] = x[0]);
        let tr = flow(&vf, &[1.0], (0.0, 1.0), 1e-3, DEFAULT_BOUND).unwrap();
        assert!(tr.status.is_completed());
        assert_eq!(tr.times.len(), 1001);
        assert!((tr.last()[0] - std::f64::consts::E).abs() <= 1e-8);
    }

    #[test]
    fn quadratic_blowup_time() {
        let vf = FnField::new(1, |_, x, o| o[0] = x[0] * x[0]);
        let tr = flow(&vf, &[1.0], (0.0, 2.0), 1e-3, 1e6).unwrap();
        let FlowStatus::Blowup { t_star } = tr.status else {
            panic!("expected blowup, got {:?}", tr.status);
        };
        assert!((t_star - 1.0).abs() <= 0.01, "t* = {t_star}");
        assert!(*tr.times.last().unwrap() < t_star);
        assert!(tr.points.iter().all(|p| p[0].abs() <= 1e6));
    }

    #[test]
    fn blowup_time_tracks_initial_value() {
        let vf = FnField::new(1, |_, x, o| o[0] = x[0] * x[0]);
        for x0 in [0.5, 1.0, 2.0, 4.0] {
            let tr = flow(&vf, &[x0], (0.0, 4.0), 1e-3, DEFAULT_BOUND).unwrap();
            let t = tr.status.t_star().unwrap();
            assert!((t - 1.0 / x0).abs() <= 0.05 / x0, "x0={x0}, t*={t}");
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let vf = FnField::new(3, |_, _, o| o.fill(0.0));
        let tr = flow(&vf, &[1.0, -2.0, 3.0], (0.0, 5.0), 0.1, DEFAULT_BOUND).unwrap();
        assert!(tr.status.is_completed());
        assert!(tr.points.iter().all(|p| p == &[1.0, -2.0, 3.0]));
    }

    #[test]
    fn domain_exit_is_located() {
        let vf = DomainField::new(
            2,
            |_, _, o: &mut [f64]| {
                o[0] = 1.0;
                o[1] = 0.0;
                Ok(())
            },
            |x: &[f64]| x[0] * x[0] + x[1] * x[1] < 1.0,
        );
        let tr = flow(&vf, &[0.0, 0.0], (0.0, 3.0), 1e-3, DEFAULT_BOUND).unwrap();
        let FlowStatus::DomainExit { t_star } = tr.status else {
            panic!("{:?}", tr.status);
        };
        assert!((t_star - 1.0).abs() < 1e-6, "{t_star}");
        assert!(*tr.times.last().unwrap() <= t_star);
        assert!(matches!(
            flow(&vf, &[2.0, 0.0], (0.0, 1.0), 1e-3, DEFAULT_BOUND),
            Err(FlowError::InitialOutsideDomain(_))
        ));
    }

    #[test]
    fn fourth_order_convergence() {
        let vf = FnField::new(1, |_, x, o| o[0] = x[0]);
        let exact = [std::f64::consts::E];
        let ConvergenceOrder::Observed(p) =
            flow_endpoint_order(&vf, &[1.0], (0.0, 1.0), 0.1, Some(&exact)).unwrap()
        else {
            panic!()
        };
        assert!((3.5..=4.5).contains(&p), "{p}");
        let ConvergenceOrder::Observed(q) =
            flow_endpoint_order(&vf, &[1.0], (0.0, 1.0), 0.1, None).unwrap()
        else {
            panic!()
        };
        assert!((3.5..=4.5).contains(&q), "{q}");
    }

    #[test]
    fn rotation_field_order() {
        let vf = FnField::new(2, |_, x, o| {
            o[0] = -x[1];
            o[1] = x[0];
        });
        let ConvergenceOrder::Observed(p) =
            flow_endpoint_order(&vf, &[1.0, 0.0], (0.0, 1.0), 0.1, None).unwrap()
        else {
            panic!()
        };
        assert!((3.5..=4.5).contains(&p), "{p}");
    }

    #[test]
    fn zero_field_order_is_exact() {
        let vf = FnField::new(1, |_, _, o| o[0] = 0.0);
        assert_eq!(
            flow_endpoint_order(&vf, &[2.0], (0.0, 1.0), 0.1, Some(&[2.0])).unwrap(),
            ConvergenceOrder::Exact
        );
    }

    #[test]
    fn halving_step_cuts_error_eightfold() {
        let vf = FnField::new(2, |t, x, o| {
            o[0] = x[1] * t.cos();
            o[1] = -x[0];
        });
        let reference = flow(&vf, &[1.0, 0.5], (0.0, 2.0), 1e-4, DEFAULT_BOUND).unwrap();
        let r = reference.last().to_vec();
        let mut prev = None;
        for h in [0.2, 0.1, 0.05] {
            let e = distance(flow(&vf, &[1.0, 0.5], (0.0, 2.0), h, DEFAULT_BOUND).unwrap().last(), &r);
            if let Some(p) = prev {
                assert!(p / e >= 8.0, "ratio {}", p / e);
            }
            prev = Some(e);
        }
    }

    #[test]
    fn csv_layout() {
        let vf = FnField::new(2, |_, _, o| o.fill(1.0));
        let tr = flow(&vf, &[0.0, 0.0], (0.0, 1.0), 0.5, DEFAULT_BOUND).unwrap();
        let csv = tr.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x1,x2");
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert_eq!(lines[4], "# status=completed");
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        let n = 10;
        let f = |t: f64| 1.0 - 2.0 * t + 3.0 * t * t - t.powi(3);
        let samples: Vec<DVector<f64>> = (0..=n).map(|k| DVector::from_element(1, f(k as f64 / n as f64))).collect();
        for &t in &[0.0, 0.013, 0.55, 0.97, 1.0] {
            let v = interpolate(&samples, t, Interpolation::Cubic)[0];
            assert!((v - f(t)).abs() < 1e-13, "{t}");
        }
        let lin = interpolate(&samples, 0.05, Interpolation::Linear)[0];
        assert!((lin - 0.5 * (f(0.0) + f(0.1))).abs() < 1e-15);
    }
}
