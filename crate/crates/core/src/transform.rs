//! Closed-form Fourier–Laplace transforms `E[exp(-trace((u - iv) X_t)) | x₀]`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WishartError};
use crate::model::{integrated_covariance, ModelParams};
use crate::operator::{
    inverse, log_det_one_plus, psd_sqrt, same_dim, spectral_norm, spectral_norm_complex, to_complex, ComplexOperator,
    GeneratorSpec, PsdOperator, SelfAdjointOperator, Sign, PSD_TOL,
};
use crate::quadrature::{integrate, integrate_with, QuadOptions};
use crate::riccati::{psi_fourier_with, psi_general_with, psi_laplace_with, psi_scalar};

/// Neumann series truncation.
pub const NEUMANN_KMAX: usize = 64;
/// Stop once the geometric tail bound drops below this.
pub const NEUMANN_TAIL: f64 = 1e-12;
/// Required agreement of Neumann and direct inverses.
pub const NEUMANN_AGREEMENT: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    LaplacePos,
    FourierSigned,
    JointlyDiagonal,
    MixedSmallT,
    ExtendedNegative,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::LaplacePos => "laplace-pos",
            Regime::FourierSigned => "fourier-signed",
            Regime::JointlyDiagonal => "jointly-diagonal",
            Regime::MixedSmallT => "mixed-small-t",
            Regime::ExtendedNegative => "extended-negative",
        }
    }
}

/// Test operator `u - iv` tagged with the regime it is evaluated in.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunctional {
    pub u: SelfAdjointOperator,
    pub v: SelfAdjointOperator,
    pub regime: Regime,
}

impl TestFunctional {
    pub fn laplace(u: PsdOperator) -> Self {
        let n = u.dim();
        Self {
            u: u.into_self_adjoint(),
            v: SelfAdjointOperator::zeros(n),
            regime: Regime::LaplacePos,
        }
    }

    pub fn fourier(v: SelfAdjointOperator) -> Self {
        let n = v.dim();
        Self {
            u: SelfAdjointOperator::zeros(n),
            v,
            regime: Regime::FourierSigned,
        }
    }

    pub fn mixed(u: SelfAdjointOperator, v: SelfAdjointOperator) -> Self {
        Self {
            u,
            v,
            regime: Regime::MixedSmallT,
        }
    }

    pub fn jointly_diagonal(u: SelfAdjointOperator, v: SelfAdjointOperator) -> Self {
        Self {
            u,
            v,
            regime: Regime::JointlyDiagonal,
        }
    }

    /// `u` with `-u` PSD.
    pub fn extended(u: SelfAdjointOperator) -> Self {
        let n = u.dim();
        Self {
            u,
            v: SelfAdjointOperator::zeros(n),
            regime: Regime::ExtendedNegative,
        }
    }

    pub fn dim(&self) -> usize {
        self.u.dim()
    }

    /// `u - iv`.
    pub fn complex(&self) -> Result<ComplexOperator> {
        ComplexOperator::u_minus_iv(&self.u, &self.v)
    }

    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        same_dim(p.dim, self.u.dim())?;
        same_dim(p.dim, self.v.dim())?;
        let bad = |msg: &str| Err(WishartError::InvalidFunctional(format!("{}: {msg}", self.regime.name())));
        match self.regime {
            Regime::LaplacePos => {
                if !self.v.is_zero() {
                    return bad("v must vanish");
                }
                if self.u.sign_definiteness() != Some(Sign::Positive) {
                    return bad("u must be PSD");
                }
            }
            Regime::FourierSigned => {
                if !self.u.is_zero() {
                    return bad("u must vanish");
                }
                if self.v.sign_definiteness().is_none() {
                    return Err(WishartError::NotSignDefinite);
                }
            }
            Regime::JointlyDiagonal => {
                if !p.is_jointly_diagonal() || !self.u.is_diagonal() || !self.v.is_diagonal() {
                    return Err(WishartError::NotJointlyDiagonal);
                }
                if self.u.diagonal().iter().any(|&x| x < 0.0) {
                    return bad("u must be PSD");
                }
            }
            Regime::MixedSmallT => {}
            Regime::ExtendedNegative => {
                if !self.v.is_zero() {
                    return bad("v must vanish");
                }
                if self.u.is_zero() {
                    return Ok(());
                }
                if self.u.sign_definiteness() != Some(Sign::Negative) {
                    return bad("-u must be PSD");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Positive when the regime's sufficient condition holds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball_margin: Option<f64>,
    /// `½‖Q_t‖ − ‖u‖`, the extended-regime bound in its literally printed form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub printed_bound_margin: Option<f64>,
    /// Spectral condition number of the matrix that is inverted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neumann_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neumann_terms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neumann_discrepancy: Option<f64>,
    /// `|φ_quadrature − φ_determinant|` when both are available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_check: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransformResult {
    pub value: Complex64,
    /// `trace(ψ(t, u - iv) x₀)`.
    pub psi_trace_term: Complex64,
    /// `α∫₀ᵗ trace(ψ(s, u - iv) Q) ds`.
    pub phi_term: Complex64,
    pub regime: Regime,
    pub diagnostics: Diagnostics,
}

impl TransformResult {
    fn assemble(psi_trace_term: Complex64, phi_term: Complex64, regime: Regime, diagnostics: Diagnostics) -> Self {
        Self {
            value: (-psi_trace_term - phi_term).exp(),
            psi_trace_term,
            phi_term,
            regime,
            diagnostics,
        }
    }
}

fn cplx(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn trace_product_complex(psi: &DMatrix<Complex64>, x: &DMatrix<f64>) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..psi.nrows() {
        for j in 0..psi.ncols() {
            acc += psi[(i, j)] * x[(j, i)];
        }
    }
    acc
}

fn condition_of(m: &SelfAdjointOperator) -> f64 {
    let sp = m.spectrum();
    let lo = sp.values.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    sp.max_abs() / lo
}

/// `det(I + 2√u Q_t √u)^{-α/2} exp(-trace(ψ(t,u) x₀))` for PSD `u`.
///
/// `phi_term` is `(α/2) log det(I + 2√u Q_t √u)`.
pub fn laplace_closed(p: &ModelParams, x0: &PsdOperator, u: &PsdOperator, t: f64) -> Result<TransformResult> {
    same_dim(p.dim, x0.dim())?;
    same_dim(p.dim, u.dim())?;
    let qt = integrated_covariance(p, t)?.qt;
    let s = p.semigroup(t);
    let ru = psd_sqrt(u);
    let ru = ru.matrix();
    let sandwich = SelfAdjointOperator::new(ru * qt.matrix() * ru * 2.0)?;
    let phi = 0.5 * p.alpha * log_det_one_plus(&sandwich)?;
    let psi = psi_laplace_with(&s, ru, qt.matrix())?;
    let tr = psi.component_mul(&x0.matrix().transpose()).sum();
    let inner = SelfAdjointOperator::new(DMatrix::identity(p.dim, p.dim) + sandwich.matrix())?;
    let diagnostics = Diagnostics {
        condition_number: Some(condition_of(&inner)),
        ..Diagnostics::default()
    };
    Ok(TransformResult::assemble(cplx(tr), cplx(phi), Regime::LaplacePos, diagnostics))
}

/// `E[exp(trace(|u| X_t))]` for `-u` PSD, valid while `‖u‖‖Q_t‖ < ½`.
pub fn laplace_extended(p: &ModelParams, x0: &PsdOperator, u: &SelfAdjointOperator, t: f64) -> Result<TransformResult> {
    same_dim(p.dim, x0.dim())?;
    same_dim(p.dim, u.dim())?;
    p.require_integer_alpha()?;
    if !u.is_zero() && u.sign_definiteness() != Some(Sign::Negative) {
        return Err(WishartError::InvalidFunctional("extended regime needs -u PSD".into()));
    }
    let qt = integrated_covariance(p, t)?.qt;
    let u_norm = u.operator_norm();
    let qt_norm = qt.operator_norm();
    let margin = 0.5 - u_norm * qt_norm;
    if margin <= 0.0 {
        return Err(WishartError::BallConditionViolated { margin });
    }
    let s = p.semigroup(t);
    let ra = psd_sqrt(&u.abs());
    let ra = ra.matrix();
    let sandwich = SelfAdjointOperator::new(ra * qt.matrix() * ra * -2.0)?;
    let phi = 0.5 * p.alpha * log_det_one_plus(&sandwich)?;
    let inner = DMatrix::identity(p.dim, p.dim) + sandwich.matrix();
    let psi = -(&s * ra * inverse(&inner)? * ra * s.transpose());
    let tr = psi.component_mul(&x0.matrix().transpose()).sum();
    let diagnostics = Diagnostics {
        ball_margin: Some(margin),
        printed_bound_margin: Some(0.5 * qt_norm - u_norm),
        condition_number: Some(condition_of(&SelfAdjointOperator::new(inner)?)),
        ..Diagnostics::default()
    };
    Ok(TransformResult::assemble(
        cplx(tr),
        cplx(phi),
        Regime::ExtendedNegative,
        diagnostics,
    ))
}

/// `E[exp(i trace(v X_t))]` for sign-definite `v`; φ by adaptive quadrature.
pub fn fourier_signed(p: &ModelParams, x0: &PsdOperator, v: &SelfAdjointOperator, t: f64) -> Result<TransformResult> {
    same_dim(p.dim, x0.dim())?;
    same_dim(p.dim, v.dim())?;
    let sign = v.sign_definiteness().ok_or(WishartError::NotSignDefinite)?;
    let zero = Complex64::new(0.0, 0.0);
    if v.is_zero() {
        return Ok(TransformResult::assemble(zero, zero, Regime::FourierSigned, Diagnostics::default()));
    }
    let psi_at = |s: f64| -> Result<ComplexOperator> {
        let qs = integrated_covariance(p, s)?.qt;
        psi_fourier_with(&p.semigroup(s), v, sign, qs.matrix())
    };
    let psi_t = psi_at(t)?;
    let tr = trace_product_complex(psi_t.matrix(), x0.matrix());
    let phi = phi_quadrature(p, t, |s| psi_at(s).map(ComplexOperator::into_matrix))?;
    Ok(TransformResult::assemble(tr, phi, Regime::FourierSigned, Diagnostics::default()))
}

fn phi_quadrature(
    p: &ModelParams,
    t: f64,
    psi_at: impl Fn(f64) -> Result<DMatrix<Complex64>>,
) -> Result<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    if p.alpha == 0.0 || t == 0.0 {
        return Ok(zero);
    }
    let q = p.q.matrix();
    let mut failure = None;
    let integral = integrate(
        |s| match psi_at(s) {
            Ok(m) => trace_product_complex(&m, q),
            Err(e) => {
                failure.get_or_insert(e);
                zero
            }
        },
        0.0,
        t,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(integral * p.alpha),
    }
}

/// Characteristic function `E[exp(i r trace(X_t))]`.
pub fn fourier_trace_cf(p: &ModelParams, x0: &PsdOperator, r: f64, t: f64) -> Result<Complex64> {
    Ok(fourier_trace_cf_result(p, x0, r, t)?.value)
}

pub fn fourier_trace_cf_result(p: &ModelParams, x0: &PsdOperator, r: f64, t: f64) -> Result<TransformResult> {
    let v = SelfAdjointOperator::identity(p.dim).scale(r);
    fourier_signed(p, x0, &v, t)
}

/// Constants `(M, ω)` with `‖e^{sA}‖ ≤ M e^{ωs}` on `[0, t]`.
///
/// Diagonal generators give `M = 1` and `ω = max a_j`. Dense generators use
/// the spectral abscissa and the largest ratio `‖e^{sA}‖e^{-ωs}` on a dyadic grid.
pub fn growth_constants(a: &GeneratorSpec, t: f64) -> (f64, f64) {
    let omega = a.spectral_abscissa();
    match a {
        GeneratorSpec::Diagonal(_) => (1.0, omega),
        GeneratorSpec::Dense(_) => {
            const LEVELS: u32 = 6;
            let points = 1usize << LEVELS;
            let mut m: f64 = 1.0;
            for k in 1..=points {
                let s = t * k as f64 / points as f64;
                let norm = spectral_norm(&crate::operator::semigroup_apply(a, s));
                m = m.max(norm * (-omega * s).exp());
            }
            (m, omega)
        }
    }
}

/// Right-hand side `|ω|/(M²|e^{2ωt} − 1|)` of the ball condition.
pub fn ball_radius(a: &GeneratorSpec, t: f64) -> f64 {
    if t == 0.0 {
        return f64::INFINITY;
    }
    let (m, omega) = growth_constants(a, t);
    let ratio = if omega == 0.0 {
        1.0 / (2.0 * t)
    } else {
        omega.abs() / (2.0 * omega * t).exp_m1().abs()
    };
    ratio / (m * m)
}

/// `ball_radius − (‖u‖² + ‖v‖²)^{1/2}‖Q‖`.
pub fn ball_margin(p: &ModelParams, u: &SelfAdjointOperator, v: &SelfAdjointOperator, t: f64) -> f64 {
    let lhs = u.operator_norm().hypot(v.operator_norm()) * p.q.operator_norm();
    ball_radius(&p.generator, t) - lhs
}

/// `Σ_{k≤K} (−2BQ_t)^k B`, stopped by the geometric tail bound.
fn neumann_resolvent(b: &DMatrix<Complex64>, qt: &DMatrix<f64>) -> (DMatrix<Complex64>, f64, usize) {
    let step = b * to_complex(qt) * Complex64::new(-2.0, 0.0);
    let ratio = spectral_norm_complex(&step);
    let mut term = b.clone();
    let mut acc = b.clone();
    let mut k = 0;
    while k < NEUMANN_KMAX {
        if ratio < 1.0 && ratio.powi(k as i32 + 1) / (1.0 - ratio) < NEUMANN_TAIL {
            break;
        }
        term = &step * term;
        acc += &term;
        k += 1;
    }
    (acc, ratio, k)
}

/// General `u - iv` inside the ball condition.
pub fn mixed_transform(
    p: &ModelParams,
    x0: &PsdOperator,
    u: &SelfAdjointOperator,
    v: &SelfAdjointOperator,
    t: f64,
) -> Result<TransformResult> {
    same_dim(p.dim, x0.dim())?;
    same_dim(p.dim, u.dim())?;
    same_dim(p.dim, v.dim())?;
    p.require_integer_alpha()?;
    let margin = ball_margin(p, u, v, t);
    if margin <= 0.0 {
        return Err(WishartError::BallConditionViolated { margin });
    }
    let b = ComplexOperator::u_minus_iv(u, v)?.into_matrix();
    let psi_at = |s: f64| -> Result<DMatrix<Complex64>> {
        let qs = integrated_covariance(p, s)?.qt;
        Ok(psi_general_with(&p.semigroup(s), &b, qs.matrix())?.into_matrix())
    };
    let qt = integrated_covariance(p, t)?.qt;
    let s = to_complex(&p.semigroup(t));
    let psi_t = psi_at(t)?;
    let (series, ratio, terms) = neumann_resolvent(&b, qt.matrix());
    let psi_series = &s * series * s.transpose();
    let neumann_discrepancy = psi_series
        .iter()
        .zip(psi_t.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();

    let tr = trace_product_complex(&psi_t, x0.matrix());
    let phi = phi_quadrature(p, t, psi_at)?;
    let mut diagnostics = Diagnostics {
        ball_margin: Some(margin),
        neumann_ratio: Some(ratio),
        neumann_terms: Some(terms),
        neumann_discrepancy: Some(neumann_discrepancy),
        ..Diagnostics::default()
    };
    if v.is_zero() {
        if let Ok(up) = PsdOperator::new(u.clone()) {
            let closed = laplace_closed(p, x0, &up, t)?;
            diagnostics.phi_check = Some((phi - closed.phi_term).norm());
        }
    }
    Ok(TransformResult::assemble(tr, phi, Regime::MixedSmallT, diagnostics))
}

/// Diagonal model with diagonal `u`, `v`: scalar ψ per mode.
pub fn jointly_diagonal_transform(
    p: &ModelParams,
    x0: &PsdOperator,
    u: &SelfAdjointOperator,
    v: &SelfAdjointOperator,
    t: f64,
) -> Result<TransformResult> {
    let f = TestFunctional::jointly_diagonal(u.clone(), v.clone());
    f.validate(p)?;
    same_dim(p.dim, x0.dim())?;
    let a = p.generator.diagonal().expect("validated jointly diagonal");
    let q = p.q.diagonal();
    let b: Vec<Complex64> = u
        .diagonal()
        .iter()
        .zip(v.diagonal())
        .map(|(&re, im)| Complex64::new(re, -im))
        .collect();
    let x = x0.diagonal();
    let tr: Complex64 = (0..p.dim).map(|j| psi_scalar(a[j], q[j], b[j], t) * x[j]).sum();
    let phi = if p.alpha == 0.0 || t == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        let integrand = |s: f64| -> Complex64 { (0..p.dim).map(|j| psi_scalar(a[j], q[j], b[j], s) * q[j]).sum() };
        integrate(integrand, 0.0, t) * p.alpha
    };
    Ok(TransformResult::assemble(tr, phi, Regime::JointlyDiagonal, Diagnostics::default()))
}

/// Dispatches on the functional's regime.
pub fn evaluate(p: &ModelParams, x0: &PsdOperator, f: &TestFunctional, t: f64) -> Result<TransformResult> {
    f.validate(p)?;
    let result = match f.regime {
        Regime::LaplacePos => laplace_closed(p, x0, &PsdOperator::new(f.u.clone())?, t)?,
        Regime::FourierSigned => fourier_signed(p, x0, &f.v, t)?,
        Regime::JointlyDiagonal => jointly_diagonal_transform(p, x0, &f.u, &f.v, t)?,
        Regime::MixedSmallT => mixed_transform(p, x0, &f.u, &f.v, t)?,
        Regime::ExtendedNegative => laplace_extended(p, x0, &f.u, t)?,
    };
    if f.regime != Regime::ExtendedNegative && f.u.sign_definiteness() == Some(Sign::Positive) {
        check_modulus(&result)?;
    }
    Ok(result)
}

/// `|value| ≤ 1`, as required for PSD `u`.
pub fn check_modulus(r: &TransformResult) -> Result<()> {
    let excess = r.value.norm() - 1.0;
    if excess > 1e-12 {
        return Err(WishartError::ConsistencyViolation {
            what: "transform modulus exceeds one",
            discrepancy: excess,
            tolerance: 1e-12,
        });
    }
    Ok(())
}

/// Both projected forms and the embedded full-space value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectedLaplace {
    /// `det(I + 2√u P*Q_tP √u)^{-α/2} exp(-trace(P*e^{tA*}x₀e^{tA}P √u(I + 2√u P*Q_tP √u)⁻¹√u))`.
    pub symmetric_form: f64,
    /// `det(I + 2P*Q_tP u)^{-α/2} exp(-trace(P*e^{tA*}x₀e^{tA}P u(I + 2P*Q_tP u)⁻¹))`.
    pub product_form: f64,
    /// `laplace_closed` at `P u P*`.
    pub embedded: f64,
}

impl ProjectedLaplace {
    pub fn value(&self) -> f64 {
        self.symmetric_form
    }
}

pub(crate) fn check_orthonormal(basis: &DMatrix<f64>) -> Result<()> {
    let k = basis.ncols();
    let gram = basis.transpose() * basis;
    let dev = (gram - DMatrix::<f64>::identity(k, k)).amax();
    if dev > 1e-12 {
        return Err(WishartError::NonOrthonormalBasis(dev));
    }
    Ok(())
}

/// Laplace transform of the compression `P*X_tP` onto the span of `basis`.
pub fn projected_laplace(
    p: &ModelParams,
    x0: &PsdOperator,
    u: &PsdOperator,
    basis: &DMatrix<f64>,
    t: f64,
) -> Result<ProjectedLaplace> {
    same_dim(p.dim, basis.nrows())?;
    same_dim(basis.ncols(), u.dim())?;
    same_dim(p.dim, x0.dim())?;
    check_orthonormal(basis)?;
    let k = u.dim();
    let qt = integrated_covariance(p, t)?.qt;
    let s = p.semigroup(t);
    let qp = basis.transpose() * qt.matrix() * basis;
    let xp = basis.transpose() * s.transpose() * x0.matrix() * &s * basis;
    let ident = DMatrix::<f64>::identity(k, k);

    let ru = psd_sqrt(u);
    let ru = ru.matrix();
    let sandwich = SelfAdjointOperator::new(ru * &qp * ru * 2.0)?;
    let logdet = log_det_one_plus(&sandwich)?;
    let tr1 = (&xp * ru * inverse(&(&ident + sandwich.matrix()))? * ru).trace();
    let symmetric_form = (-0.5 * p.alpha * logdet - tr1).exp();

    let prod = &ident + &qp * u.matrix() * 2.0;
    let lu = prod.clone().lu();
    let det = lu.determinant();
    if det <= 0.0 {
        return Err(WishartError::SingularDeterminant { eigenvalue: det });
    }
    let tr2 = (&xp * u.matrix() * lu.try_inverse().ok_or(WishartError::Singular)?).trace();
    let product_form = det.powf(-0.5 * p.alpha) * (-tr2).exp();

    let embedded_u = PsdOperator::project(&SelfAdjointOperator::new(basis * u.matrix() * basis.transpose())?);
    let embedded = laplace_closed(p, x0, &embedded_u, t)?.value.re;
    let discrepancy = (embedded - symmetric_form).abs();
    if discrepancy > 1e-10 {
        return Err(WishartError::ConsistencyViolation {
            what: "projected transform vs embedded operator",
            discrepancy,
            tolerance: 1e-10,
        });
    }
    Ok(ProjectedLaplace {
        symmetric_form,
        product_form,
        embedded,
    })
}

/// Rank-`n` initial state `Σ x_i h_i h_iᵀ` and rank-`m` test operator `Σ u_j g_j g_jᵀ`.
#[derive(Clone, Debug)]
pub struct FiniteRankInput {
    pub x_weights: Vec<f64>,
    /// Columns `h_i`.
    pub x_vectors: DMatrix<f64>,
    pub u_weights: Vec<f64>,
    /// Columns `g_j`.
    pub u_vectors: DMatrix<f64>,
}

impl FiniteRankInput {
    fn validate(&self, dim: usize) -> Result<()> {
        same_dim(dim, self.x_vectors.nrows())?;
        same_dim(dim, self.u_vectors.nrows())?;
        same_dim(self.x_weights.len(), self.x_vectors.ncols())?;
        same_dim(self.u_weights.len(), self.u_vectors.ncols())?;
        if self.x_weights.iter().chain(&self.u_weights).any(|&w| w < 0.0) {
            return Err(WishartError::InvalidParameter("finite-rank weights must be >= 0".into()));
        }
        check_orthonormal(&self.x_vectors)?;
        check_orthonormal(&self.u_vectors)
    }

    fn embed(weights: &[f64], vectors: &DMatrix<f64>) -> Result<PsdOperator> {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(weights));
        Ok(PsdOperator::project(&SelfAdjointOperator::new(vectors * d * vectors.transpose())?))
    }

    pub fn x0(&self) -> Result<PsdOperator> {
        Self::embed(&self.x_weights, &self.x_vectors)
    }

    pub fn u(&self) -> Result<PsdOperator> {
        Self::embed(&self.u_weights, &self.u_vectors)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FiniteRankTransform {
    pub laplace: f64,
    pub fourier: Complex64,
}

/// Reduced `m×m` evaluation of `E[exp(-trace(uX_t))]` and `E[exp(i trace(uX_t))]`.
///
/// `Q̂_s = D GᵀQ_sG D` with `D = diag(√u_j)` is assembled by quadrature; both
/// values are cross-checked against the full-space evaluators to `1e-9`.
pub fn finite_rank_example_transform(p: &ModelParams, input: &FiniteRankInput, t: f64) -> Result<FiniteRankTransform> {
    input.validate(p.dim)?;
    let m = input.u_weights.len();
    if m == 0 || input.u_weights.iter().all(|&w| w == 0.0) {
        return Ok(FiniteRankTransform {
            laplace: 1.0,
            fourier: Complex64::new(1.0, 0.0),
        });
    }
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(m, input.u_weights.iter().map(|w| w.sqrt())));
    let g = &input.u_vectors;
    let q = p.q.matrix();
    let rate = |s: f64| -> DMatrix<f64> {
        let e = p.semigroup(s);
        let sg = &e * g * &d;
        sg.transpose() * q * sg
    };
    let q_hat = |s: f64| -> DMatrix<f64> {
        if s == 0.0 {
            DMatrix::zeros(m, m)
        } else {
            integrate_with(rate, 0.0, s, QuadOptions::default()).value
        }
    };

    let qh = q_hat(t);
    let s = p.semigroup(t);
    // c_{ij} = ⟨h_i, e^{tA} g_j⟩ √u_j
    let c = input.x_vectors.transpose() * &s * g * &d;
    let xw = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&input.x_weights));
    let ident = DMatrix::<f64>::identity(m, m);

    let sym = SelfAdjointOperator::new(&qh * 2.0)?;
    let logdet = log_det_one_plus(&sym)?;
    let res = inverse(&(&ident + sym.matrix()))?;
    let tr_l = (&xw * &c * res * c.transpose()).trace();
    let laplace = (-0.5 * p.alpha * logdet - tr_l).exp();

    let i_ident = DMatrix::from_diagonal_element(m, m, Complex64::new(0.0, 1.0));
    let res_f = |qh: &DMatrix<f64>| -> Result<DMatrix<Complex64>> {
        crate::operator::inverse_complex(&(&i_ident + to_complex(qh) * Complex64::new(2.0, 0.0)))
    };
    let cc = to_complex(&c);
    let tr_f = (to_complex(&xw) * &cc * res_f(&qh)? * cc.transpose()).trace();
    let mut failure = None;
    let phi_f = if p.alpha == 0.0 || t == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        integrate(
            |s: f64| match res_f(&q_hat(s)) {
                Ok(r) => trace_product_complex(&r, &rate(s)),
                Err(e) => {
                    failure.get_or_insert(e);
                    Complex64::new(0.0, 0.0)
                }
            },
            0.0,
            t,
        ) * p.alpha
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let fourier = (-tr_f - phi_f).exp();

    let x0 = input.x0()?;
    let u = input.u()?;
    let closed = laplace_closed(p, &x0, &u, t)?.value.re;
    let signed = fourier_signed(p, &x0, &u, t)?.value;
    let gap = (closed - laplace).abs().max((signed - fourier).norm());
    if gap > 1e-9 {
        return Err(WishartError::ConsistencyViolation {
            what: "finite-rank transform vs full-space evaluation",
            discrepancy: gap,
            tolerance: 1e-9,
        });
    }
    Ok(FiniteRankTransform { laplace, fourier })
}

/// `E[exp(-a‖X + μ‖²)]` for centred Gaussian `X` with covariance `diag(q)`:
/// `Π(1 + 2aq_k)^{-1/2} exp(-a Σ μ_k²/(1 + 2aq_k))`.
pub fn gaussian_norm_oracle(q_spectrum: &[f64], mu: &[f64], a: f64) -> Result<f64> {
    same_dim(q_spectrum.len(), mu.len())?;
    if let Some(&bad) = q_spectrum.iter().find(|&&q| q < 0.0) {
        return Err(WishartError::NotPsd {
            min_eigenvalue: bad,
            tolerance: PSD_TOL,
        });
    }
    let q_max = q_spectrum.iter().copied().fold(0.0, f64::max);
    let bound = if q_max > 0.0 { -1.0 / (2.0 * q_max) } else { f64::NEG_INFINITY };
    if a <= bound {
        return Err(WishartError::InvalidShift { shift: a, bound });
    }
    let mut log_value = 0.0;
    for (&q, &m) in q_spectrum.iter().zip(mu) {
        let d = 1.0 + 2.0 * a * q;
        log_value += -0.5 * d.ln() - a * m * m / d;
    }
    Ok(log_value.exp())
}
