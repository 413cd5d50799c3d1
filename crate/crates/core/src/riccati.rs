//! Explicit solutions of the operator Riccati equation
//! `ψ' = -½(ψ+ψᵀ)Q(ψ+ψᵀ) + Aψ + ψAᵀ`, `ψ(0) = B`, a numerical integrator,
//! and residual, flow and φ diagnostics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WishartError};
use crate::model::{integrated_covariance, ModelParams};
use crate::operator::{
    inverse, inverse_complex, log_det_one_plus, psd_sqrt, same_dim, spectral_norm, to_complex, ComplexOperator,
    GeneratorSpec, PsdOperator, SelfAdjointOperator, Sign,
};
use crate::quadrature::integrate;

/// Intermediate norms above this abort [`riccati_integrate`].
pub const BLOWUP_NORM: f64 = 1e12;
/// Tolerance of the φ cross-check against the log-determinant.
pub const PHI_CHECK_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiccatiMethod {
    ExplicitLaplace,
    ExplicitFourier,
    ExplicitDiagonal,
    NumericOde,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub t_grid: Vec<f64>,
    pub psi_values: Vec<ComplexOperator>,
    pub initial: ComplexOperator,
    pub method: RiccatiMethod,
}

pub(crate) fn psi_laplace_with(s: &DMatrix<f64>, rb: &DMatrix<f64>, qt: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = rb.nrows();
    let inner = DMatrix::identity(n, n) + rb * qt * rb * 2.0;
    let inv = match inner.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => inverse(&inner)?,
    };
    Ok(s * rb * inv * rb * s.transpose())
}

/// `ψ(t,B) = e^{tA}√B(I + 2√B Q_t √B)⁻¹√B e^{tA}ᵀ` for PSD `B`.
///
/// Post-checks `‖ψ‖ ≤ ‖B‖‖e^{tA}‖²` and `|trace(ψQ)| ≤ ‖B‖‖√Q e^{tA}‖²_{L₂}`.
pub fn psi_laplace(p: &ModelParams, b: &PsdOperator, t: f64) -> Result<PsdOperator> {
    same_dim(p.dim, b.dim())?;
    let qt = integrated_covariance(p, t)?.qt;
    let s = p.semigroup(t);
    let rb = psd_sqrt(b);
    let psi = psi_laplace_with(&s, rb.matrix(), qt.matrix())?;
    let psi = PsdOperator::project(&SelfAdjointOperator::new(psi)?);

    let b_norm = b.operator_norm();
    let op_bound = b_norm * spectral_norm(&s).powi(2);
    let op = psi.operator_norm();
    if op > op_bound * (1.0 + 1e-10) + 1e-10 {
        return Err(WishartError::ConsistencyViolation {
            what: "operator-norm bound on psi",
            discrepancy: op - op_bound,
            tolerance: 1e-10,
        });
    }
    let hs = (s.transpose() * p.q.matrix() * &s).trace();
    let tr = psi.trace_product(p.q.matrix()).abs();
    let tr_bound = b_norm * hs;
    if tr > tr_bound * (1.0 + 1e-10) + 1e-10 {
        return Err(WishartError::ConsistencyViolation {
            what: "trace bound on psi Q",
            discrepancy: tr - tr_bound,
            tolerance: 1e-10,
        });
    }
    Ok(psi)
}

/// `ψ(t, -iv) = e^{tA}√|v|(i·sign(v) I + 2√|v| Q_t √|v|)⁻¹√|v| e^{tA}ᵀ`.
pub fn psi_fourier(p: &ModelParams, v: &SelfAdjointOperator, t: f64) -> Result<ComplexOperator> {
    same_dim(p.dim, v.dim())?;
    let sign = v.sign_definiteness().ok_or(WishartError::NotSignDefinite)?;
    let qt = integrated_covariance(p, t)?.qt;
    let s = p.semigroup(t);
    psi_fourier_with(&s, v, sign, qt.matrix())
}

pub(crate) fn psi_fourier_with(
    s: &DMatrix<f64>,
    v: &SelfAdjointOperator,
    sign: Sign,
    qt: &DMatrix<f64>,
) -> Result<ComplexOperator> {
    let n = v.dim();
    if v.is_zero() {
        return Ok(ComplexOperator::zeros(n));
    }
    let rv = psd_sqrt(&v.abs());
    let rv = rv.matrix();
    let inner = to_complex(&(rv * qt * rv * 2.0))
        + DMatrix::from_diagonal_element(n, n, Complex64::new(0.0, sign.as_f64()));
    let inv = inverse_complex(&inner)?;
    let left = to_complex(&(s * rv));
    let psi = &left * inv * left.transpose();
    ComplexOperator::new(symmetrize_complex(psi))
}

/// `ψ(t,B) = e^{tA}(I + 2BQ_t)⁻¹B e^{tA}ᵀ` for complex symmetric `B`, by direct solve.
pub fn psi_general(p: &ModelParams, b: &ComplexOperator, t: f64) -> Result<ComplexOperator> {
    same_dim(p.dim, b.dim())?;
    let qt = integrated_covariance(p, t)?.qt;
    let s = p.semigroup(t);
    psi_general_with(&s, b.matrix(), qt.matrix())
}

pub(crate) fn psi_general_with(
    s: &DMatrix<f64>,
    b: &DMatrix<Complex64>,
    qt: &DMatrix<f64>,
) -> Result<ComplexOperator> {
    let n = b.nrows();
    let inner = DMatrix::<Complex64>::identity(n, n) + b * to_complex(qt) * Complex64::new(2.0, 0.0);
    let resolved = inner.lu().solve(b).ok_or(WishartError::Singular)?;
    let sc = to_complex(s);
    ComplexOperator::new(symmetrize_complex(&sc * resolved * sc.transpose()))
}

fn symmetrize_complex(m: DMatrix<Complex64>) -> DMatrix<Complex64> {
    let t = m.transpose();
    (m + t).map(|z| z * 0.5)
}

/// Scalar solution `e^{2at} b / (1 + 2b q (e^{2at}-1)/(2a))` in a form that
/// stays finite for large `|a|t`.
pub fn psi_scalar(a: f64, q: f64, b: Complex64, t: f64) -> Complex64 {
    if b == Complex64::new(0.0, 0.0) {
        return b;
    }
    if a == 0.0 {
        return b / (1.0 + 2.0 * b * q * t);
    }
    let x = 2.0 * a * t;
    if x <= 0.0 {
        let qt = q * x.exp_m1() / (2.0 * a);
        b * x.exp() / (1.0 + 2.0 * b * qt)
    } else {
        b / ((-x).exp() + b * q * (-(-x).exp_m1()) / a)
    }
}

/// Diagonal `ψ` for a jointly diagonal model.
pub fn psi_diagonal(p: &ModelParams, b_diag: &[Complex64], t: f64) -> Result<ComplexOperator> {
    let a = match (&p.generator, p.q.is_diagonal()) {
        (GeneratorSpec::Diagonal(a), true) => a,
        _ => return Err(WishartError::NotJointlyDiagonal),
    };
    same_dim(p.dim, b_diag.len())?;
    if let Some(bad) = b_diag.iter().find(|b| b.re < 0.0) {
        return Err(WishartError::InvalidParameter(format!("Re(b) = {} < 0", bad.re)));
    }
    if t < 0.0 {
        return Err(WishartError::NegativeTime(t));
    }
    let q = p.q.diagonal();
    let n = p.dim;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = psi_scalar(a[j], q[j], b_diag[j], t);
    }
    ComplexOperator::new(m)
}

/// Right-hand side `-½(ψ+ψᵀ)Q(ψ+ψᵀ) + Aψ + ψAᵀ`; `ψᵀ` does not conjugate.
pub fn riccati_rhs(p: &ModelParams, psi: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let a = to_complex(&p.generator.matrix());
    let q = to_complex(p.q.matrix());
    let sym = psi + psi.transpose();
    let quad = &sym * q * &sym;
    quad.map(|z| z * -0.5) + &a * psi + psi * a.transpose()
}

/// `‖(ψ(t+h) − ψ(t−h))/(2h) − RHS(ψ(t))‖_F`.
pub fn riccati_residual(
    p: &ModelParams,
    psi_fn: impl Fn(f64) -> Result<ComplexOperator>,
    t: f64,
    h: f64,
) -> Result<f64> {
    if !(t > h && h > 0.0) {
        return Err(WishartError::InvalidParameter(format!("need t > h > 0, got t = {t}, h = {h}")));
    }
    let plus = psi_fn(t + h)?;
    let minus = psi_fn(t - h)?;
    let mid = psi_fn(t)?;
    let fd = (plus.matrix() - minus.matrix()).map(|z| z / (2.0 * h));
    let diff = fd - riccati_rhs(p, mid.matrix());
    Ok(diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
}

/// Default central-difference step for residual checks at time `t`. Fast
/// modes with `|a| t ≫ 1` shrink the step so the truncation error stays
/// below the residual tolerance.
pub fn default_residual_step(p: &ModelParams, t: f64) -> f64 {
    1e-4 * t / (p.generator.inf_norm() * t).sqrt().max(1.0)
}

fn frobenius(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Classical fourth-order Runge–Kutta on `[0, t]` with `steps` equal steps.
pub fn riccati_integrate(p: &ModelParams, b: &ComplexOperator, t: f64, steps: usize) -> Result<RiccatiSolution> {
    same_dim(p.dim, b.dim())?;
    if steps == 0 {
        return Err(WishartError::InvalidParameter("steps must be >= 1".into()));
    }
    if t < 0.0 {
        return Err(WishartError::NegativeTime(t));
    }
    let h = t / steps as f64;
    let mut psi = b.matrix().clone();
    let mut t_grid = Vec::with_capacity(steps + 1);
    let mut psi_values = Vec::with_capacity(steps + 1);
    t_grid.push(0.0);
    psi_values.push(b.clone());
    let half = Complex64::new(0.5 * h, 0.0);
    let full = Complex64::new(h, 0.0);
    let sixth = Complex64::new(h / 6.0, 0.0);
    let two = Complex64::new(2.0, 0.0);
    for step in 1..=steps {
        let k1 = riccati_rhs(p, &psi);
        let k2 = riccati_rhs(p, &(&psi + &k1 * half));
        let k3 = riccati_rhs(p, &(&psi + &k2 * half));
        let k4 = riccati_rhs(p, &(&psi + &k3 * full));
        psi += (k1 + k2 * two + k3 * two + k4) * sixth;
        let norm = frobenius(&psi);
        if !norm.is_finite() || norm > BLOWUP_NORM {
            return Err(WishartError::StepOverflow {
                step,
                time: step as f64 * h,
                norm,
            });
        }
        t_grid.push(step as f64 * h);
        psi_values.push(ComplexOperator::new(psi.clone())?);
    }
    Ok(RiccatiSolution {
        t_grid,
        psi_values,
        initial: b.clone(),
        method: RiccatiMethod::NumericOde,
    })
}

/// `‖ψ(s, ψ(t,u)) − ψ(s+t, u)‖_F` in the Laplace regime.
pub fn flow_check(p: &ModelParams, u: &PsdOperator, s: f64, t: f64) -> Result<f64> {
    if s == 0.0 || u.is_zero() {
        return Ok(0.0);
    }
    let inner = psi_laplace(p, u, t)?;
    let composed = psi_laplace(p, &inner, s)?;
    let direct = psi_laplace(p, u, s + t)?;
    Ok((composed.matrix() - direct.matrix()).norm())
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() || t_grid[0] != 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(WishartError::GridNotIncreasing);
    }
    Ok(())
}

impl RiccatiSolution {
    pub fn laplace(p: &ModelParams, b: &PsdOperator, t_grid: &[f64]) -> Result<Self> {
        check_grid(t_grid)?;
        let psi_values = t_grid
            .iter()
            .map(|&t| psi_laplace(p, b, t).map(|m| ComplexOperator::from_real(m.matrix())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            t_grid: t_grid.to_vec(),
            psi_values,
            initial: ComplexOperator::from_real(b.matrix()),
            method: RiccatiMethod::ExplicitLaplace,
        })
    }

    /// Solution started at `B = -iv`.
    pub fn fourier(p: &ModelParams, v: &SelfAdjointOperator, t_grid: &[f64]) -> Result<Self> {
        check_grid(t_grid)?;
        let psi_values = t_grid
            .iter()
            .map(|&t| psi_fourier(p, v, t))
            .collect::<Result<Vec<_>>>()?;
        let zero = DMatrix::zeros(v.dim(), v.dim());
        Ok(Self {
            t_grid: t_grid.to_vec(),
            psi_values,
            initial: ComplexOperator::from_parts(&zero, &(-v.matrix()))?,
            method: RiccatiMethod::ExplicitFourier,
        })
    }

    pub fn diagonal(p: &ModelParams, b_diag: &[Complex64], t_grid: &[f64]) -> Result<Self> {
        check_grid(t_grid)?;
        let psi_values = t_grid
            .iter()
            .map(|&t| psi_diagonal(p, b_diag, t))
            .collect::<Result<Vec<_>>>()?;
        let n = b_diag.len();
        let init = DMatrix::from_fn(n, n, |i, j| if i == j { b_diag[i] } else { Complex64::new(0.0, 0.0) });
        Ok(Self {
            t_grid: t_grid.to_vec(),
            psi_values,
            initial: ComplexOperator::new(init)?,
            method: RiccatiMethod::ExplicitDiagonal,
        })
    }

    pub fn terminal(&self) -> &ComplexOperator {
        self.psi_values.last().expect("solution has at least one grid point")
    }

    pub fn horizon(&self) -> f64 {
        *self.t_grid.last().expect("solution has at least one grid point")
    }

    /// `ψ(s)` at an arbitrary `s` for explicit methods.
    fn explicit_at(&self, p: &ModelParams, s: f64) -> Result<DMatrix<Complex64>> {
        match self.method {
            RiccatiMethod::ExplicitLaplace => {
                let b = PsdOperator::from_matrix(self.initial.re())?;
                Ok(to_complex(psi_laplace(p, &b, s)?.matrix()))
            }
            RiccatiMethod::ExplicitFourier => {
                let v = SelfAdjointOperator::new(-self.initial.im())?;
                Ok(psi_fourier(p, &v, s)?.into_matrix())
            }
            RiccatiMethod::ExplicitDiagonal => {
                let b: Vec<Complex64> = self.initial.matrix().diagonal().iter().copied().collect();
                Ok(psi_diagonal(p, &b, s)?.into_matrix())
            }
            RiccatiMethod::NumericOde => unreachable!("numeric solutions are only known on their grid"),
        }
    }
}

fn trace_product_complex(psi: &DMatrix<Complex64>, q: &DMatrix<f64>) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..psi.nrows() {
        for j in 0..psi.ncols() {
            acc += psi[(i, j)] * q[(j, i)];
        }
    }
    acc
}

/// `α∫₀ᵀ trace(ψ(s)Q) ds` over the horizon of `sol`.
///
/// Explicit solutions are integrated adaptively; numeric ones by the
/// derivative-corrected trapezoid rule on their grid. Real PSD initial values
/// are cross-checked against `(α/2) log det(I + 2√B Q_T √B)`.
pub fn phi_of(p: &ModelParams, sol: &RiccatiSolution) -> Result<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    let horizon = sol.horizon();
    if p.alpha == 0.0 || horizon == 0.0 || sol.initial.frobenius_norm() == 0.0 {
        return Ok(zero);
    }
    let q = p.q.matrix();
    let value = match sol.method {
        RiccatiMethod::NumericOde => {
            let f: Vec<Complex64> = sol
                .psi_values
                .iter()
                .map(|m| trace_product_complex(m.matrix(), q))
                .collect();
            let df: Vec<Complex64> = sol
                .psi_values
                .iter()
                .map(|m| trace_product_complex(&riccati_rhs(p, m.matrix()), q))
                .collect();
            let mut acc = zero;
            for k in 0..sol.t_grid.len() - 1 {
                let h = sol.t_grid[k + 1] - sol.t_grid[k];
                acc += (f[k] + f[k + 1]) * (0.5 * h) + (df[k] - df[k + 1]) * (h * h / 12.0);
            }
            acc * p.alpha
        }
        _ => {
            let mut failure = None;
            let integral = integrate(
                |s| match sol.explicit_at(p, s) {
                    Ok(m) => trace_product_complex(&m, q),
                    Err(e) => {
                        failure.get_or_insert(e);
                        zero
                    }
                },
                0.0,
                horizon,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            integral * p.alpha
        }
    };

    if sol.initial.im().iter().all(|&x| x == 0.0) {
        if let Ok(b) = PsdOperator::from_matrix(sol.initial.re()) {
            let closed = phi_closed(p, &b, horizon)?;
            let diff = (value - Complex64::new(closed, 0.0)).norm();
            if diff > PHI_CHECK_TOL * (1.0 + closed.abs()) {
                return Err(WishartError::ConsistencyViolation {
                    what: "phi quadrature vs log-determinant",
                    discrepancy: diff,
                    tolerance: PHI_CHECK_TOL,
                });
            }
        }
    }
    Ok(value)
}

/// `(α/2) log det(I + 2√B Q_t √B)`.
pub fn phi_closed(p: &ModelParams, b: &PsdOperator, t: f64) -> Result<f64> {
    let qt = integrated_covariance(p, t)?.qt;
    let rb = psd_sqrt(b);
    let inner = SelfAdjointOperator::new(rb.matrix() * qt.matrix() * rb.matrix() * 2.0)?;
    Ok(0.5 * p.alpha * log_det_one_plus(&inner)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_low_rank;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn diag_model(n: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..0.5)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.5)).collect();
        ModelParams::diagonal(2.0, &a, &q, "diag").unwrap()
    }

    fn dense_model(n: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |i, j| {
            let off = rng.random_range(-0.4..0.4);
            if i == j { -0.5 - 0.3 * i as f64 + off } else { off }
        });
        ModelParams::new(2.0, GeneratorSpec::Dense(a), random_low_rank(n, n, 1.0, seed + 100), "dense").unwrap()
    }

    fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn laplace_initial_and_zero() {
        let p = dense_model(4, 1);
        let b = random_low_rank(4, 4, 1.0, 2);
        let psi0 = psi_laplace(&p, &b, 0.0).unwrap();
        assert!((psi0.matrix() - b.matrix()).norm() < 1e-12);
        assert!(psi_laplace(&p, &PsdOperator::zeros(4), 0.7).unwrap().is_zero());
    }

    #[test]
    fn laplace_matches_scalar_formula_on_diagonal() {
        let p = diag_model(6, 3);
        let b: Vec<f64> = (0..6).map(|j| 0.3 + 0.2 * j as f64).collect();
        let psi = psi_laplace(&p, &PsdOperator::from_diagonal(&b).unwrap(), 0.8).unwrap();
        let bd: Vec<Complex64> = b.iter().map(|&x| c(x, 0.0)).collect();
        let diag = psi_diagonal(&p, &bd, 0.8).unwrap();
        assert!(max_diff(&to_complex(psi.matrix()), diag.matrix()) <= 1e-12);
    }

    #[test]
    fn fourier_examples() {
        let p = ModelParams::diagonal(1.0, &[0.0], &[0.7], "s").unwrap();
        assert!(psi_fourier(&p, &SelfAdjointOperator::zeros(1), 1.0).unwrap().frobenius_norm() == 0.0);
        let (v, q, t) = (1.3, 0.7, 0.9);
        let psi = psi_fourier(&p, &SelfAdjointOperator::from_diagonal(&[v]).unwrap(), t).unwrap();
        let expected = c(2.0 * v * q * t, -1.0) * v / (1.0 + 4.0 * v * v * q * q * t * t);
        assert!((psi.matrix()[(0, 0)] - expected).norm() < 1e-14);
        // also equals psi_scalar at b = -iv
        assert!((psi_scalar(0.0, q, c(0.0, -v), t) - expected).norm() < 1e-14);
    }

    #[test]
    fn fourier_conjugation_symmetry() {
        let p = dense_model(5, 4);
        let v = random_low_rank(5, 5, 1.0, 5);
        let plus = psi_fourier(&p, &v, 0.6).unwrap();
        let minus = psi_fourier(&p, &v.as_self_adjoint().scale(-1.0), 0.6).unwrap();
        assert!(max_diff(minus.matrix(), plus.conj().matrix()) <= 1e-12);
        let re = SelfAdjointOperator::new(plus.re()).unwrap();
        assert!(re.spectrum().min() >= -1e-12);
    }

    #[test]
    fn fourier_rejects_indefinite() {
        let p = diag_model(2, 0);
        let v = SelfAdjointOperator::from_diagonal(&[1.0, -1.0]).unwrap();
        assert!(matches!(psi_fourier(&p, &v, 1.0), Err(WishartError::NotSignDefinite)));
    }

    #[test]
    fn diagonal_examples() {
        let p = ModelParams::diagonal(1.0, &[0.0, -1.0], &[0.5, 1.0], "d").unwrap();
        let z = psi_diagonal(&p, &[c(0.0, 0.0), c(0.0, 0.0)], 1.0).unwrap();
        assert_eq!(z.frobenius_norm(), 0.0);
        let psi = psi_diagonal(&p, &[c(2.0, 0.0), c(0.0, 0.0)], 0.4).unwrap();
        assert!((psi.matrix()[(0, 0)].re - 2.0 / (1.0 + 2.0 * 2.0 * 0.5 * 0.4)).abs() < 1e-15);
        let dense = ModelParams::new(1.0, GeneratorSpec::Dense(p.generator.matrix()), p.q.clone(), "d").unwrap();
        assert!(matches!(
            psi_diagonal(&dense, &[c(1.0, 0.0), c(1.0, 0.0)], 1.0),
            Err(WishartError::NotJointlyDiagonal)
        ));
    }

    #[test]
    fn diagonal_formula_matches_printed_form() {
        // a b e^{2at}(a + b̄ q (e^{2at}-1)) / |a + b q (e^{2at}-1)|²
        for &(a, q, b, t) in &[(-1.0, 0.5, c(0.7, 0.3), 0.9), (0.8, 1.2, c(0.2, -1.5), 2.0), (-3.0, 0.1, c(1.0, 4.0), 0.3)] {
            let e = (2.0f64 * a * t).exp();
            let d = c(a, 0.0) + b * q * (e - 1.0);
            let printed = b * a * e * (c(a, 0.0) + b.conj() * q * (e - 1.0)) / d.norm_sqr();
            assert!((psi_scalar(a, q, b, t) - printed).norm() < 1e-12 * printed.norm().max(1.0));
        }
    }

    #[test]
    fn diagonal_is_stable_for_large_arguments() {
        for &at in &[-50.0, -10.0, 10.0, 50.0] {
            let v = psi_scalar(at, 1.0, c(0.5, 0.5), 1.0);
            assert!(v.re.is_finite() && v.im.is_finite());
        }
        // growing mode saturates at a/q
        let v = psi_scalar(50.0, 2.0, c(1.0, 0.0), 1.0);
        assert!((v.re - 25.0).abs() < 1e-10);
    }

    #[test]
    fn residual_examples() {
        let p = ModelParams::diagonal(1.0, &[-1.0], &[1.0], "s").unwrap();
        let zero = riccati_residual(&p, |_| Ok(ComplexOperator::zeros(1)), 0.5, 1e-4).unwrap();
        assert_eq!(zero, 0.0);
        let b = PsdOperator::identity(1);
        let f = |s| psi_laplace(&p, &b, s).map(|m| ComplexOperator::from_real(m.matrix()));
        assert!(riccati_residual(&p, f, 0.5, 1e-4).unwrap() <= 1e-6);
    }

    #[test]
    fn residual_is_second_order() {
        let p = diag_model(8, 11);
        let b = PsdOperator::from_diagonal(&[1.0, 2.0, 0.5, 0.1, 3.0, 1.5, 0.7, 2.2]).unwrap();
        let f = |s| psi_laplace(&p, &b, s).map(|m| ComplexOperator::from_real(m.matrix()));
        let r1 = riccati_residual(&p, f, 0.5, 1e-3).unwrap();
        let r2 = riccati_residual(&p, f, 0.5, 5e-4).unwrap();
        assert!((r1 / r2 - 4.0).abs() < 0.5, "{r1} {r2}");
    }

    #[test]
    fn resolvent_derivative() {
        let p = dense_model(4, 8);
        let b = random_low_rank(4, 4, 1.0, 9);
        let rb = psd_sqrt(&b);
        let rb = rb.matrix();
        let res = |t: f64| {
            let qt = integrated_covariance(&p, t).unwrap().qt;
            inverse(&(DMatrix::identity(4, 4) + rb * qt.matrix() * rb * 2.0)).unwrap()
        };
        let t = 0.6;
        let s = p.semigroup(t);
        let r = res(t);
        let exact = &r * rb * s.transpose() * p.q.matrix() * &s * rb * &r * -2.0;
        let err = |h: f64| ((res(t + h) - res(t - h)) / (2.0 * h) - &exact).norm();
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn integrate_examples() {
        let p = dense_model(4, 12);
        let zero = riccati_integrate(&p, &ComplexOperator::zeros(4), 1.0, 10).unwrap();
        assert!(zero.psi_values.iter().all(|m| m.frobenius_norm() == 0.0));

        let b = random_low_rank(4, 4, 1.0, 13);
        let t = 1.0;
        let sol = riccati_integrate(&p, &ComplexOperator::from_real(b.matrix()), t, 1000).unwrap();
        let exact = psi_laplace(&p, &b, t).unwrap();
        assert!(max_diff(sol.terminal().matrix(), &to_complex(exact.matrix())) <= 1e-8);

        let v = random_low_rank(4, 4, 1.0, 14);
        let zero_m = DMatrix::zeros(4, 4);
        let init = ComplexOperator::from_parts(&zero_m, &(-v.matrix())).unwrap();
        let sol = riccati_integrate(&p, &init, t, 1000).unwrap();
        let exact = psi_fourier(&p, &v, t).unwrap();
        assert!(max_diff(sol.terminal().matrix(), exact.matrix()) <= 1e-8);
    }

    #[test]
    fn integrate_detects_blowup() {
        let p = ModelParams::diagonal(1.0, &[0.0], &[1.0], "s").unwrap();
        let b = ComplexOperator::from_real(&DMatrix::from_element(1, 1, -1.0));
        assert!(matches!(riccati_integrate(&p, &b, 1.0, 1000), Err(WishartError::StepOverflow { .. })));
    }

    #[test]
    fn integrate_is_cauchy_in_step_count() {
        let p = diag_model(5, 15);
        let b = ComplexOperator::from_parts(
            random_low_rank(5, 5, 1.0, 16).matrix(),
            random_low_rank(5, 2, 0.5, 17).matrix(),
        )
        .unwrap();
        let a = riccati_integrate(&p, &b, 0.8, 400).unwrap();
        let bb = riccati_integrate(&p, &b, 0.8, 800).unwrap();
        assert!(max_diff(a.terminal().matrix(), bb.terminal().matrix()) <= 1e-8);
    }

    #[test]
    fn flow_examples() {
        let p = diag_model(6, 21);
        let u = random_low_rank(6, 3, 1.0, 22);
        assert_eq!(flow_check(&p, &u, 0.0, 0.5).unwrap(), 0.0);
        assert_eq!(flow_check(&p, &PsdOperator::zeros(6), 0.3, 0.5).unwrap(), 0.0);
        assert!(flow_check(&p, &u, 0.3, 0.7).unwrap() <= 1e-10 * (1.0 + u.operator_norm()));
    }

    #[test]
    fn phi_examples() {
        let mut p = diag_model(5, 31);
        let u = random_low_rank(5, 5, 1.0, 32);
        let sol = RiccatiSolution::laplace(&p, &u, &[0.0, 0.5, 1.0]).unwrap();
        let phi = phi_of(&p, &sol).unwrap();
        assert!((phi.re - phi_closed(&p, &u, 1.0).unwrap()).abs() <= 1e-8);
        assert_eq!(phi_of(&p, &RiccatiSolution::laplace(&p, &PsdOperator::zeros(5), &[0.0, 1.0]).unwrap()).unwrap(), c(0.0, 0.0));
        p.alpha = 0.0;
        assert_eq!(phi_of(&p, &sol).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn phi_numeric_matches_explicit() {
        let p = dense_model(4, 41);
        let v = random_low_rank(4, 4, 1.0, 42);
        let explicit = RiccatiSolution::fourier(&p, &v, &[0.0, 0.8]).unwrap();
        let zero = DMatrix::zeros(4, 4);
        let init = ComplexOperator::from_parts(&zero, &(-v.matrix())).unwrap();
        let numeric = riccati_integrate(&p, &init, 0.8, 800).unwrap();
        let a = phi_of(&p, &explicit).unwrap();
        let b = phi_of(&p, &numeric).unwrap();
        assert!((a - b).norm() <= 1e-8, "{a} {b}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn laplace_bounds_and_positivity(seed in 0u64..10_000, t in 0.0f64..2.0) {
                let p = dense_model(4, seed);
                let b = random_low_rank(4, 1 + (seed % 4) as usize, 1.5, seed + 1);
                let psi = psi_laplace(&p, &b, t).unwrap();
                let bound = b.operator_norm() * spectral_norm(&p.semigroup(t)).powi(2);
                prop_assert!(psi.operator_norm() <= bound + 1e-10);
                prop_assert!(psi.spectrum().min() >= -1e-14 * (1.0 + psi.operator_norm()));
            }

            #[test]
            fn flow_property(seed in 0u64..10_000, s in 0.0f64..1.0, t in 0.0f64..1.0) {
                let p = dense_model(3, seed);
                let u = random_low_rank(3, 3, 1.0, seed + 7);
                prop_assert!(flow_check(&p, &u, s, t).unwrap() <= 1e-10 * (1.0 + u.operator_norm()));
            }
        }
    }
}
