//! Adaptive Gauss–Legendre quadrature for scalar and matrix-valued integrands.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Absolute tolerance used for integrated covariances and φ integrals.
pub const QUAD_TOL: f64 = 1e-11;
/// Maximum number of bisection levels.
pub const MAX_DEPTH: u32 = 20;

const ORDER: usize = 10;

/// Values that can be integrated: a vector space with a norm.
pub trait QuadValue: Clone {
    fn scaled(&self, c: f64) -> Self;
    fn add_scaled(&mut self, other: &Self, c: f64);
    fn distance(&self, other: &Self) -> f64;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn scaled(&self, c: f64) -> Self {
        self * c
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        *self += other * c;
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).abs()
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn scaled(&self, c: f64) -> Self {
        self * c
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        *self += other * c;
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl QuadValue for DMatrix<f64> {
    fn scaled(&self, c: f64) -> Self {
        self * c
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        self.zip_apply(other, |a, b| *a += b * c);
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl QuadValue for DMatrix<Complex64> {
    fn scaled(&self, c: f64) -> Self {
        self.map(|z| z * c)
    }
    fn add_scaled(&mut self, other: &Self, c: f64) {
        self.zip_apply(other, |a, b| *a += b * c);
    }
    fn distance(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
    fn magnitude(&self) -> f64 {
        self.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub tol: f64,
    pub max_depth: u32,
    /// Panels are always split at least this many times.
    pub min_depth: u32,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            tol: QUAD_TOL,
            max_depth: MAX_DEPTH,
            min_depth: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuadResult<T> {
    pub value: T,
    /// Sum of the accepted panel error estimates.
    pub error_estimate: f64,
    pub evaluations: usize,
}

fn nodes_and_weights() -> &'static ([f64; ORDER], [f64; ORDER]) {
    static RULE: OnceLock<([f64; ORDER], [f64; ORDER])> = OnceLock::new();
    RULE.get_or_init(|| {
        let mut x = [0.0; ORDER];
        let mut w = [0.0; ORDER];
        let n = ORDER as f64;
        for i in 0..ORDER {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=ORDER {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            x[i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
        (x, w)
    })
}

fn panel<T: QuadValue>(f: &mut impl FnMut(f64) -> T, a: f64, b: f64) -> T {
    let (x, w) = nodes_and_weights();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = f(mid + half * x[0]).scaled(w[0] * half);
    for k in 1..ORDER {
        acc.add_scaled(&f(mid + half * x[k]), w[k] * half);
    }
    acc
}

/// `∫_a^b f` with the default tolerance.
pub fn integrate<T: QuadValue>(f: impl FnMut(f64) -> T, a: f64, b: f64) -> T {
    integrate_with(f, a, b, QuadOptions::default()).value
}

/// Adaptive bisection: a panel is accepted when its one-panel estimate and the
/// sum of its two halves differ by less than its share of `tol`.
pub fn integrate_with<T: QuadValue>(
    mut f: impl FnMut(f64) -> T,
    a: f64,
    b: f64,
    opts: QuadOptions,
) -> QuadResult<T> {
    let total = (b - a).abs();
    let whole = panel(&mut f, a, b);
    let mut evaluations = ORDER;
    if total == 0.0 {
        return QuadResult {
            value: whole,
            error_estimate: 0.0,
            evaluations,
        };
    }
    let mut value = whole.scaled(0.0);
    let mut error_estimate = 0.0;
    // (a, b, estimate, depth)
    let mut stack = vec![(a, b, whole, 0u32)];
    while let Some((lo, hi, est, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = panel(&mut f, lo, mid);
        let right = panel(&mut f, mid, hi);
        evaluations += 2 * ORDER;
        let mut refined = left.clone();
        refined.add_scaled(&right, 1.0);
        let err = refined.distance(&est);
        let share = opts.tol * (hi - lo).abs() / total;
        let floor = 64.0 * f64::EPSILON * refined.magnitude();
        if depth + 1 >= opts.min_depth && (err <= share.max(floor) || depth + 1 >= opts.max_depth) {
            value.add_scaled(&refined, 1.0);
            error_estimate += err;
        } else {
            stack.push((mid, hi, right, depth + 1));
            stack.push((lo, mid, left, depth + 1));
        }
    }
    QuadResult {
        value,
        error_estimate,
        evaluations,
    }
}
