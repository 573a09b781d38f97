//! Tilted-Gaussian special function and nested Gauss-Legendre integration.
//!
//! Both building blocks work on zero-mean Gaussian variables of standard
//! deviation `sigma` (dB) carrying exponential tilts `10^(y b xi / 10)`.
//! The closed form
//!
//! ```text
//! A(x, y) = exp(y^2 sigma^2 b^2 ln(10)^2 / 200)
//!           * { 0.5 + 0.5 erf[ x/(sigma sqrt2) - y sigma b ln10 / (10 sqrt2) ] }
//!         = integral_{-inf}^{x} 10^(y b t / 10) N(t; 0, sigma^2) dt
//! ```
//!
//! is the workhorse of every subset probability and moment integral. The
//! nested engine integrates smooth kernels against the same tilted Gaussian
//! weights over up to three levels whose limits may depend affinely on the
//! outer variables; each level's window is truncated around the tilt-shifted
//! mean `mu* = y b sigma^2 ln10 / 10`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{ModelError, Result};

pub const LN10: f64 = std::f64::consts::LN_10;
const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Integer tilt order: a factor `10^(y b xi / 10)` in the integrand.
///
/// Second-moment terms produce `|y|` up to 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tilt(pub i32);

/// Fixed-node quadrature configuration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadratureSpec {
    /// Relative tolerances asserted on node-doubling, per dimension count.
    pub rel_tol_1d: f64,
    pub rel_tol_2d: f64,
    pub rel_tol_3d: f64,
    /// Gauss-Legendre nodes per integration level.
    pub nodes_per_dim: usize,
    /// Truncation half-width in units of sigma around the shifted mean.
    pub truncation_mult: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol_1d: 1e-8,
            rel_tol_2d: 1e-7,
            rel_tol_3d: 1e-5,
            nodes_per_dim: 96,
            truncation_mult: 8.0,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        for t in [self.rel_tol_1d, self.rel_tol_2d, self.rel_tol_3d] {
            if !(t > 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "rel_tol must be positive, got {t}"
                )));
            }
        }
        if self.nodes_per_dim < 8 {
            return Err(ModelError::InvalidParameter(format!(
                "nodes_per_dim must be >= 8, got {}",
                self.nodes_per_dim
            )));
        }
        if !(self.truncation_mult >= 5.0) {
            return Err(ModelError::InvalidParameter(format!(
                "truncation_mult must be >= 5, got {}",
                self.truncation_mult
            )));
        }
        Ok(())
    }

    pub fn with_nodes(mut self, n: usize) -> Self {
        self.nodes_per_dim = n;
        self
    }
}

/// `kappa = sigma * b * ln(10) / 10`; the tilt-shifted mean is `y*kappa*sigma`.
#[inline]
pub fn kappa(sigma: f64, b_corr: f64) -> f64 {
    sigma * b_corr * LN10 / 10.0
}

/// The tilted-Gaussian cumulative integral `A(x, y)`.
///
/// `A(-inf, y) = 0`, `A(+inf, y) = exp(y^2 kappa^2 / 2)`. Evaluated through
/// `erfc` so deep negative arguments keep full relative accuracy.
pub fn a_fn(x: f64, y: i32, sigma: f64, b_corr: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    let k = kappa(sigma, b_corr);
    let yk = y as f64 * k;
    let pref = (yk * yk / 2.0).exp();
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return pref;
    }
    let z = x / sigma - yk;
    pref * 0.5 * libm::erfc(-z / SQRT2)
}

/// Standard normal pdf scaled to std `sigma`.
#[inline]
pub fn gauss_pdf(x: f64, sigma: f64) -> f64 {
    (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Gauss-Legendre nodes and weights on [-1, 1], cached per order.
pub fn gl_rule(n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(compute_gl(n)))
        .clone()
}

/// Newton iteration on Legendre polynomials.
fn compute_gl(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_and_deriv(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A limit of one integration level.
#[derive(Debug, Clone, Copy)]
pub enum Limit {
    NegInf,
    PosInf,
    Const(f64),
    /// `xi_outer_level + offset`, referring to an already-integrated level.
    Affine { level: usize, offset: f64 },
}

impl Limit {
    fn resolve(&self, outer: &[f64]) -> f64 {
        match *self {
            Limit::NegInf => f64::NEG_INFINITY,
            Limit::PosInf => f64::INFINITY,
            Limit::Const(c) => c,
            Limit::Affine { level, offset } => outer[level] + offset,
        }
    }
}

/// One level of a nested integral.
#[derive(Debug, Clone, Copy)]
pub struct LevelSpec {
    pub lower: Limit,
    pub upper: Limit,
    pub tilt: Tilt,
}

/// Nested integration of `prod_level 10^(y b xi/10) f(xi) * kernel` over
/// up to three levels.
///
/// Limits may be infinite or affine in outer levels; each level is truncated
/// at `truncation_mult * sigma` around its tilt-shifted mean, and an empty
/// window contributes exactly zero. Deterministic for a fixed spec.
pub fn integrate_nested<F>(
    levels: &[LevelSpec],
    sigma: f64,
    b_corr: f64,
    kernel: F,
    spec: &QuadratureSpec,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(
        (1..=3).contains(&levels.len()),
        "1 to 3 nesting levels supported"
    );
    spec.validate()?;
    let rule = gl_rule(spec.nodes_per_dim);
    let mut point = vec![0.0; levels.len()];
    integrate_level(levels, 0, sigma, b_corr, &kernel, spec, &rule, &mut point)
}

#[allow(clippy::too_many_arguments)]
fn integrate_level<F>(
    levels: &[LevelSpec],
    depth: usize,
    sigma: f64,
    b_corr: f64,
    kernel: &F,
    spec: &QuadratureSpec,
    rule: &(Vec<f64>, Vec<f64>),
    point: &mut [f64],
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let lv = &levels[depth];
    let outer = &point[..depth];
    let lo_raw = lv.lower.resolve(outer);
    let hi_raw = lv.upper.resolve(outer);
    let shift = lv.tilt.0 as f64 * kappa(sigma, b_corr) * sigma;
    let lo = lo_raw.max(shift - spec.truncation_mult * sigma);
    let hi = hi_raw.min(shift + spec.truncation_mult * sigma);
    if !(hi > lo) {
        return Ok(0.0);
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let c = lv.tilt.0 as f64 * b_corr * LN10 / 10.0;
    let mut acc = 0.0;
    for (&xn, &wn) in rule.0.iter().zip(rule.1.iter()) {
        let x = mid + half * xn;
        point[depth] = x;
        let weight = wn * half * (c * x).exp() * gauss_pdf(x, sigma);
        let inner = if depth + 1 == levels.len() {
            let v = kernel(point);
            if !v.is_finite() {
                return Err(ModelError::NumericalDomain {
                    point: point.to_vec(),
                    what: format!("kernel returned {v}"),
                });
            }
            v
        } else {
            integrate_level(levels, depth + 1, sigma, b_corr, kernel, spec, rule, point)?
        };
        acc += weight * inner;
    }
    Ok(acc)
}
