//! Gauss rules on the reference triangle and on the unit interval.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const MAX_EXACTNESS: usize = 12;

/// Quadrature rule on the reference triangle `(0,0), (1,0), (0,1)`.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Barycentric coordinates of point `i`.
    pub fn barycentric(&self, i: usize) -> [f64; 3] {
        let [x, y] = self.points[i];
        [1.0 - x - y, x, y]
    }
}

/// Gauss-Legendre rule on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub-Welsch nodes and weights for the Jacobi weight `(1-x)^a (1+x)^b` on
/// `[-1, 1]`, with `a + b` either 0 or 1.
fn gauss_jacobi(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut t = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        let diag = if (a + b).abs() < f64::EPSILON && k == 0 {
            0.0
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
        t[(k, k)] = diag;
        if k + 1 < n {
            let m = kf + 1.0;
            let s = 2.0 * m + a + b;
            let num = 4.0 * m * (m + a) * (m + b) * (m + a + b);
            let den = s * s * (s + 1.0) * (s - 1.0);
            let off = (num / den).sqrt();
            t[(k, k + 1)] = off;
            t[(k + 1, k)] = off;
        }
    }
    let mu0 = 2f64.powf(a + b + 1.0) * gamma_small(a + 1.0) * gamma_small(b + 1.0)
        / gamma_small(a + b + 2.0);
    let eig = SymmetricEigen::new(t);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    pairs.into_iter().unzip()
}

/// Gamma function at the small positive integers used here.
fn gamma_small(x: f64) -> f64 {
    let n = x.round() as u32;
    debug_assert!((x - n as f64).abs() < 1e-14 && n >= 1);
    (1..n).map(f64::from).product()
}

fn build_triangle_rule(exactness: usize) -> QuadRule {
    // collapsed (Duffy) product rule; the Jacobi weight absorbs the (1 - eta)
    // factor of the collapse, so n points per direction are exact to 2n - 1
    let n = exactness.div_ceil(2).max(1);
    let n = if 2 * n - 1 < exactness { n + 1 } else { n };
    let (xi, wxi) = gauss_jacobi(n, 0.0, 0.0);
    let (eta, weta) = gauss_jacobi(n, 1.0, 0.0);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (j, &e) in eta.iter().enumerate() {
        for (i, &x) in xi.iter().enumerate() {
            let px = 0.25 * (1.0 + x) * (1.0 - e);
            let py = 0.5 * (1.0 + e);
            points.push([px, py]);
            weights.push(wxi[i] * weta[j] / 8.0);
        }
    }
    QuadRule {
        points,
        weights,
        exactness,
    }
}

fn rules() -> &'static Vec<QuadRule> {
    static RULES: OnceLock<Vec<QuadRule>> = OnceLock::new();
    RULES.get_or_init(|| (1..=MAX_EXACTNESS).map(build_triangle_rule).collect())
}

/// Rule integrating all polynomials of total degree `exactness` exactly.
pub fn quad_rule(exactness: usize) -> Result<&'static QuadRule> {
    if !(1..=MAX_EXACTNESS).contains(&exactness) {
        return Err(Error::Argument(format!(
            "quadrature exactness {exactness} outside 1..={MAX_EXACTNESS}"
        )));
    }
    Ok(&rules()[exactness - 1])
}

/// Clamps a requested exactness into the stored range.
pub fn quad_rule_capped(exactness: usize) -> &'static QuadRule {
    &rules()[exactness.clamp(1, MAX_EXACTNESS) - 1]
}

/// Gauss-Legendre rule on `[0, 1]` exact for degree `exactness`.
pub fn line_rule(exactness: usize) -> LineRule {
    let n = (exactness / 2 + 1).max(1);
    let (x, w) = gauss_jacobi(n, 0.0, 0.0);
    LineRule {
        points: x.iter().map(|&t| 0.5 * (t + 1.0)).collect(),
        weights: w.iter().map(|&v| 0.5 * v).collect(),
    }
}

/// `a! b! / (a + b + 2)!`, the integral of `x^a y^b` over the reference triangle.
pub fn monomial_integral(a: u32, b: u32) -> f64 {
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    fact(a) * fact(b) / fact(a + b + 2)
}
