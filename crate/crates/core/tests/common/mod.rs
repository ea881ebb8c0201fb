#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use algpaths::algebroid::LieAlgebroid;
use algpaths::apath::AHomotopy;
use algpaths::comorph::Comorphism;
use algpaths::expr::{default_names, parse_in, Expr, MatrixMap, SmoothMap};

pub fn c(v: f64) -> Expr {
    Expr::Const(v)
}

pub fn tangent(n: usize) -> Arc<LieAlgebroid> {
    Arc::new(LieAlgebroid::tangent(n))
}

/// `R² -> R`, `φ = x1`, `H ∂_y = ∂_{x1} + ∂_{x2}`.
pub fn trivial_connection() -> Comorphism {
    let vars = default_names("x", 2);
    let phi = SmoothMap::parse(&vars, &["x1"], &[]).unwrap();
    let m = MatrixMap::from_entries(vars, vec![vec![c(1.0)], vec![c(1.0)]], Vec::new());
    Comorphism::new(tangent(2), tangent(1), phi, m).unwrap()
}

/// `R⁴ -> R²`, `φ = (x1, x2)`, `H ∂_{y_i} = ∂_{x_i} + ∂_{x_{i+2}}`.
pub fn trivial_connection_4() -> Comorphism {
    let vars = default_names("x", 4);
    let phi = SmoothMap::parse(&vars, &["x1", "x2"], &[]).unwrap();
    let m = MatrixMap::from_entries(
        vars,
        vec![
            vec![c(1.0), c(0.0)],
            vec![c(0.0), c(1.0)],
            vec![c(1.0), c(0.0)],
            vec![c(0.0), c(1.0)],
        ],
        Vec::new(),
    );
    Comorphism::new(tangent(4), tangent(2), phi, m).unwrap()
}

/// `(i, id)` from `T(open unit disk)` to `TR²`.
pub fn disk_inclusion() -> Comorphism {
    let vars = default_names("x", 2);
    let disk = parse_in("1 - x1^2 - x2^2", &["x1", "x2"]).unwrap();
    let a = Arc::new(LieAlgebroid::tangent_on(vars.clone(), vec![disk]));
    let phi = SmoothMap::identity(vars.clone(), Vec::new());
    let m = MatrixMap::from_entries(vars, vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]], Vec::new());
    Comorphism::new(a, tangent(2), phi, m).unwrap()
}

/// The closed-form homotopy `x = (t, s t(1−t))`, `β = (0, t(1−t))` on `TR²`.
pub fn polynomial_homotopy(n: usize) -> AHomotopy {
    AHomotopy::from_fn(tangent(2), n, n, |t, s| {
        (
            vec![t, s * t * (1.0 - t)],
            vec![1.0, s * (1.0 - 2.0 * t)],
            vec![0.0, t * (1.0 - t)],
        )
    })
    .unwrap()
}

/// `x = (t, s sin πt)`, `β = (0, sin πt)` on `TR²`; central differences of
/// `β` in `t` carry an `O(h²)` error.
pub fn sine_homotopy(n: usize) -> AHomotopy {
    use std::f64::consts::PI;
    AHomotopy::from_fn(tangent(2), n, n, |t, s| {
        (
            vec![t, s * (PI * t).sin()],
            vec![1.0, s * PI * (PI * t).cos()],
            vec![0.0, (PI * t).sin()],
        )
    })
    .unwrap()
}

pub fn so2_basis() -> Vec<DMatrix<f64>> {
    vec![DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])]
}

/// `E_a` with `(E_a)_{bc} = −ε_{abc}`: `[E_1, E_2] = E_3` and cyclic.
pub fn so3_basis() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]),
        DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
    ]
}

pub fn so3_constants() -> Vec<Vec<Vec<f64>>> {
    let mut k = vec![vec![vec![0.0; 3]; 3]; 3];
    for (a, i, j) in [(2, 0, 1), (0, 1, 2), (1, 2, 0)] {
        k[a][i][j] = 1.0;
        k[a][j][i] = -1.0;
    }
    k
}

pub fn so2_algebra() -> Arc<LieAlgebroid> {
    Arc::new(LieAlgebroid::lie_algebra(&[vec![vec![0.0]]]).unwrap())
}

pub fn so3_algebra() -> Arc<LieAlgebroid> {
    Arc::new(LieAlgebroid::lie_algebra(&so3_constants()).unwrap())
}

/// Rodrigues' formula for `exp(ω^a E_a)`.
pub fn rodrigues(w: [f64; 3]) -> DMatrix<f64> {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let k = DMatrix::from_row_slice(3, 3, &[0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0]);
    let id = DMatrix::identity(3, 3);
    if theta == 0.0 {
        return id;
    }
    let k2 = &k * &k;
    id + k * (theta.sin() / theta) + k2 * ((1.0 - theta.cos()) / (theta * theta))
}

/// Random expression source over `x1..x{vars}` from a bounded grammar whose
/// members are smooth and moderate on `[-1.5, 1.5]^vars`.
pub fn random_expr(rng: &mut impl Rng, depth: u32, vars: usize) -> String {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.7) {
            format!("x{}", rng.gen_range(1..=vars))
        } else {
            format!("{:.3}", rng.gen_range(-2.0..2.0))
        };
    }
    let a = random_expr(rng, depth - 1, vars);
    let b = random_expr(rng, depth - 1, vars);
    match rng.gen_range(0..13) {
        0 => format!("({a} + {b})"),
        1 => format!("({a} - {b})"),
        2 => format!("({a} * {b})"),
        3 => format!("({a} / (2 + sin({b})))"),
        4 => format!("sin({a})"),
        5 => format!("cos({a})"),
        6 => format!("exp(sin({a}))"),
        7 => format!("log(1 + ({a})^2)"),
        8 => format!("sqrt(1 + ({a})^2)"),
        9 => format!("atan2({a}, 2 + cos({b}))"),
        10 => format!("({a})^2"),
        11 => format!("tan(sin({a})/2)"),
        _ => format!("-({a})^3"),
    }
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], j: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[j] += h;
    m[j] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// `|a − b| ≤ rel·max(|a|, |b|)` or `|a − b| ≤ abs`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    let d = (a - b).abs();
    d <= abs || d <= rel * a.abs().max(b.abs())
}
