//! Dense real and complex operator algebra on the truncation basis.
//!
//! Every operator on the Hilbert space is represented by its compression onto the
//! span of the first `N` vectors of a fixed orthonormal basis. All spectral
//! quantities (square roots, determinants, ranks, Schatten norms) are derived from
//! a single symmetric eigendecomposition routine, [`spectrum`].

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WishartError};
use crate::expm::expm;

/// Relative tolerance for positive semidefiniteness.
pub const PSD_TOL: f64 = 1e-10;
/// Relative Frobenius tolerance for `psd_sqrt(m)^2 == m`.
pub const SQRT_TOL: f64 = 1e-10;
/// Eigenvalues of `b` in `det(I + b)` must exceed `-1 + DET_TOL`.
pub const DET_TOL: f64 = 1e-12;
/// Backward-error target of the dense matrix exponential.
pub const EXP_TOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, sorted by decreasing eigenvalue.
///
/// Each eigenvector is normalised so that its first component of magnitude
/// above `1e-14` is positive; exactly tied eigenvalues are ordered by the
/// lexicographic order of their normalised eigenvectors (largest first). This
/// makes the decomposition a deterministic function of its input.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: DVector<f64>,
    /// Eigenvectors as columns, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `V f(Λ) Vᵀ`, symmetrised.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[k]);
        }
        let mut out = scaled * self.vectors.transpose();
        symmetrize_in_place(&mut out);
        debug_assert_eq!(out.nrows(), n);
        out
    }
}

/// Symmetric eigendecomposition; the one spectral routine used throughout.
///
/// The input must be symmetric; only that case is meaningful.
pub fn spectrum(m: &DMatrix<f64>) -> Spectrum {
    let n = m.nrows();
    let (values, mut vectors) = if is_diagonal_matrix(m) {
        (m.diagonal(), DMatrix::identity(n, n))
    } else {
        let eig = nalgebra::SymmetricEigen::new(m.clone());
        (eig.eigenvalues, eig.eigenvectors)
    };
    for mut col in vectors.column_iter_mut() {
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-14).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        values[j].total_cmp(&values[i]).then_with(|| {
            let (ci, cj) = (vectors.column(i), vectors.column(j));
            for k in 0..n {
                match cj[k].total_cmp(&ci[k]) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    let sorted_values = DVector::from_iterator(n, order.iter().map(|&k| values[k]));
    let sorted_vectors = DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    Spectrum {
        values: sorted_values,
        vectors: sorted_vectors,
    }
}

pub(crate) fn is_diagonal_matrix(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0))
}

fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_square<T>(m: &DMatrix<T>) -> Result<()>
where
    T: nalgebra::Scalar,
{
    if m.nrows() != m.ncols() {
        return Err(WishartError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(WishartError::EmptyOperator);
    }
    Ok(())
}

/// Real symmetric `N×N` matrix, an element of `S(H)` at truncation level `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorJson", into = "OperatorJson")]
pub struct SelfAdjointOperator {
    entries: DMatrix<f64>,
}

impl SelfAdjointOperator {
    /// Symmetrises `m` as `(m + mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        if m.iter().any(|x| !x.is_finite()) {
            return Err(WishartError::NonFinite);
        }
        let mut entries = m;
        symmetrize_in_place(&mut entries);
        Ok(Self { entries })
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(WishartError::DimMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    /// # Panics
    /// If `dim == 0`.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "operator dimension must be positive");
        Self {
            entries: DMatrix::zeros(dim, dim),
        }
    }

    /// # Panics
    /// If `dim == 0`.
    pub fn identity(dim: usize) -> Self {
        assert!(dim > 0, "operator dimension must be positive");
        Self {
            entries: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return Err(WishartError::EmptyOperator);
        }
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `c · h hᵀ`.
    pub fn rank_one(h: &DVector<f64>, c: f64) -> Result<Self> {
        Self::new(h * h.transpose() * c)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn spectrum(&self) -> Spectrum {
        spectrum(&self.entries)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.spectrum().values
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Operator norm `max |λ|`.
    pub fn operator_norm(&self) -> f64 {
        self.spectrum().max_abs()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn is_diagonal(&self) -> bool {
        is_diagonal_matrix(&self.entries)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&x| x == 0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.entries.diagonal().iter().copied().collect()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            entries: &self.entries * c,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        same_dim(self.dim(), other.dim())?;
        Ok(Self {
            entries: &self.entries + &other.entries,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        same_dim(self.dim(), other.dim())?;
        Ok(Self {
            entries: &self.entries - &other.entries,
        })
    }

    /// `trace(self · other)`.
    pub fn trace_product(&self, other: &DMatrix<f64>) -> f64 {
        self.entries.component_mul(&other.transpose()).sum()
    }

    /// Positive and negative parts are both allowed to vanish; `v = 0` is
    /// reported as `Positive`.
    pub fn sign_definiteness(&self) -> Option<Sign> {
        let sp = self.spectrum();
        let tol = PSD_TOL * sp.max_abs();
        if sp.min() >= -tol {
            Some(Sign::Positive)
        } else if sp.values.iter().all(|&v| v <= tol) {
            Some(Sign::Negative)
        } else {
            None
        }
    }

    /// `|m|` via the spectral calculus.
    pub fn abs(&self) -> PsdOperator {
        let sp = self.spectrum();
        PsdOperator(SelfAdjointOperator {
            entries: sp.map(f64::abs),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

pub(crate) fn same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(WishartError::DimMismatch {
            expected: a,
            found: b,
        })
    } else {
        Ok(())
    }
}

/// Positive semidefinite operator, an element of `S⁺(H)` at truncation level `N`.
///
/// On construction the smallest eigenvalue must be at least
/// `-PSD_TOL · max|λ|`; small negative eigenvalues are then clamped to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorJson", into = "OperatorJson")]
pub struct PsdOperator(SelfAdjointOperator);

impl PsdOperator {
    pub fn new(m: SelfAdjointOperator) -> Result<Self> {
        let sp = m.spectrum();
        let tol = PSD_TOL * sp.max_abs();
        let min = sp.min();
        if min < -tol {
            return Err(WishartError::NotPsd {
                min_eigenvalue: min,
                tolerance: tol,
            });
        }
        if min < 0.0 {
            return Ok(Self(SelfAdjointOperator {
                entries: sp.map(|v| v.max(0.0)),
            }));
        }
        Ok(Self(m))
    }

    /// Projects onto the cone by eigenvalue clamping, without a tolerance check.
    pub fn project(m: &SelfAdjointOperator) -> Self {
        let sp = m.spectrum();
        if sp.min() >= 0.0 {
            return Self(m.clone());
        }
        Self(SelfAdjointOperator {
            entries: sp.map(|v| v.max(0.0)),
        })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SelfAdjointOperator::new(m)?)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(SelfAdjointOperator::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(SelfAdjointOperator::identity(dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if let Some(&bad) = diag.iter().find(|&&d| d < 0.0) {
            return Err(WishartError::NotPsd {
                min_eigenvalue: bad,
                tolerance: 0.0,
            });
        }
        Ok(Self(SelfAdjointOperator::from_diagonal(diag)?))
    }

    /// Gram matrix `yᵀ y` of a `k×N` factor.
    pub fn gram(y: &DMatrix<f64>) -> Result<Self> {
        if y.ncols() == 0 {
            return Err(WishartError::EmptyOperator);
        }
        Ok(Self(SelfAdjointOperator::new(y.transpose() * y)?))
    }

    pub fn as_self_adjoint(&self) -> &SelfAdjointOperator {
        &self.0
    }

    pub fn into_self_adjoint(self) -> SelfAdjointOperator {
        self.0
    }

    /// # Panics
    /// If `c < 0`.
    pub fn scale(&self, c: f64) -> Self {
        assert!(c >= 0.0, "PSD operators are only closed under non-negative scaling");
        Self(self.0.scale(c))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self(self.0.add(&other.0)?))
    }
}

impl Deref for PsdOperator {
    type Target = SelfAdjointOperator;

    fn deref(&self) -> &SelfAdjointOperator {
        &self.0
    }
}

impl TryFrom<SelfAdjointOperator> for PsdOperator {
    type Error = WishartError;

    fn try_from(m: SelfAdjointOperator) -> Result<Self> {
        Self::new(m)
    }
}

/// Complex `N×N` matrix; houses elements of `S(H) ⊕ iS(H)` such as `u - iv` and ψ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorJson", into = "OperatorJson")]
pub struct ComplexOperator {
    entries: DMatrix<Complex64>,
}

impl ComplexOperator {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        check_square(&m)?;
        Ok(Self { entries: m })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "operator dimension must be positive");
        Self {
            entries: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_real(m: &DMatrix<f64>) -> Self {
        Self {
            entries: m.map(|x| Complex64::new(x, 0.0)),
        }
    }

    /// `re + i·im`.
    pub fn from_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(WishartError::DimMismatch {
                expected: re.nrows(),
                found: im.nrows(),
            });
        }
        Self::new(re.zip_map(im, Complex64::new))
    }

    /// `u - i·v`.
    pub fn u_minus_iv(u: &SelfAdjointOperator, v: &SelfAdjointOperator) -> Result<Self> {
        same_dim(u.dim(), v.dim())?;
        Self::from_parts(u.matrix(), &(-v.matrix()))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.entries
    }

    pub fn re(&self) -> DMatrix<f64> {
        self.entries.map(|z| z.re)
    }

    pub fn im(&self) -> DMatrix<f64> {
        self.entries.map(|z| z.im)
    }

    /// Transpose without conjugation.
    pub fn transpose(&self) -> Self {
        Self {
            entries: self.entries.transpose(),
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            entries: self.entries.map(|z| z.conj()),
        }
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// The semigroup generator `A`.
#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorSpec {
    /// `A = Σ a_j e_j⊗e_j` in the truncation basis.
    Diagonal(Vec<f64>),
    /// Dense, not necessarily symmetric.
    Dense(DMatrix<f64>),
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::Diagonal(a) => {
                if a.is_empty() {
                    return Err(WishartError::EmptyOperator);
                }
                if a.iter().any(|x| !x.is_finite()) {
                    return Err(WishartError::NonFinite);
                }
            }
            GeneratorSpec::Dense(m) => {
                check_square(m)?;
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(WishartError::NonFinite);
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::Diagonal(a) => a.len(),
            GeneratorSpec::Dense(m) => m.nrows(),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            GeneratorSpec::Diagonal(a) => DMatrix::from_diagonal(&DVector::from_column_slice(a)),
            GeneratorSpec::Dense(m) => m.clone(),
        }
    }

    pub fn diagonal(&self) -> Option<&[f64]> {
        match self {
            GeneratorSpec::Diagonal(a) => Some(a),
            GeneratorSpec::Dense(_) => None,
        }
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        match self {
            GeneratorSpec::Diagonal(a) => a.iter().fold(0.0, |m, x| m.max(x.abs())),
            GeneratorSpec::Dense(m) => m
                .row_iter()
                .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }

    /// `max Re σ(A)`.
    pub fn spectral_abscissa(&self) -> f64 {
        match self {
            GeneratorSpec::Diagonal(a) => a.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            GeneratorSpec::Dense(m) => m
                .clone()
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// `e^{tA}` as a dense matrix. Diagonal generators are exponentiated entrywise.
pub fn semigroup_apply(a: &GeneratorSpec, t: f64) -> DMatrix<f64> {
    debug_assert!(t >= 0.0);
    match a {
        GeneratorSpec::Diagonal(d) => {
            DMatrix::from_diagonal(&DVector::from_iterator(d.len(), d.iter().map(|&x| (x * t).exp())))
        }
        GeneratorSpec::Dense(m) => {
            if t == 0.0 {
                DMatrix::identity(m.nrows(), m.ncols())
            } else {
                expm(&(m * t))
            }
        }
    }
}

/// `√m` via the eigendecomposition, with negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &PsdOperator) -> PsdOperator {
    let sp = m.spectrum();
    PsdOperator(SelfAdjointOperator {
        entries: sp.map(|v| v.max(0.0).sqrt()),
    })
}

/// `log det(I + b) = Σ log1p(λ_k(b))`.
pub fn log_det_one_plus(b: &SelfAdjointOperator) -> Result<f64> {
    let sp = b.spectrum();
    let mut acc = 0.0;
    for &lambda in sp.values.iter() {
        if lambda <= -1.0 + DET_TOL {
            return Err(WishartError::SingularDeterminant { eigenvalue: lambda });
        }
        acc += lambda.ln_1p();
    }
    Ok(acc)
}

/// `det(I + b) = Π (1 + λ_k(b))`, evaluated as `exp(Σ log1p λ_k)`.
pub fn det_one_plus(b: &SelfAdjointOperator) -> Result<f64> {
    Ok(log_det_one_plus(b)?.exp())
}

/// Number of eigenvalues with `|λ| > tol · max(1, ‖m‖)`.
pub fn rank_eps(m: &SelfAdjointOperator, tol: f64) -> usize {
    let sp = m.spectrum();
    let threshold = tol * sp.max_abs().max(1.0);
    sp.values.iter().filter(|v| v.abs() > threshold).count()
}

/// Order of a Schatten norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SchattenOrder {
    Finite(f64),
    /// Operator norm.
    Infinity,
}

impl From<f64> for SchattenOrder {
    fn from(p: f64) -> Self {
        if p == f64::INFINITY {
            SchattenOrder::Infinity
        } else {
            SchattenOrder::Finite(p)
        }
    }
}

pub fn schatten_norm(m: &SelfAdjointOperator, p: impl Into<SchattenOrder>) -> Result<f64> {
    let sp = m.spectrum();
    match p.into() {
        SchattenOrder::Infinity => Ok(sp.max_abs()),
        SchattenOrder::Finite(p) if p >= 1.0 => {
            let scale = sp.max_abs();
            if scale == 0.0 {
                return Ok(0.0);
            }
            // scaled to avoid overflow of |λ|^p
            let s: f64 = sp.values.iter().map(|v| (v.abs() / scale).powf(p)).sum();
            Ok(scale * s.powf(1.0 / p))
        }
        SchattenOrder::Finite(p) => Err(WishartError::InvalidOrder(p)),
    }
}

/// Largest singular value of a general real matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Largest singular value of a general complex matrix.
pub fn spectral_norm_complex(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub(crate) fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or(WishartError::Singular)
}

pub(crate) fn inverse_complex(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    m.clone().try_inverse().ok_or(WishartError::Singular)
}

pub(crate) fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Residuals of `A(I+BA)⁻¹ = √A(I+√A B √A)⁻¹√A` and `det(I+BA) = det(I+√A B √A)`.
#[derive(Clone, Debug, Serialize)]
pub struct SimpleInverseCheck {
    /// Frobenius norm of the difference of the two sides.
    pub residual: f64,
    pub det_direct: f64,
    pub det_symmetric: f64,
    pub det_relative_diff: f64,
}

pub fn simple_inverse_identity_check(a: &PsdOperator, b: &PsdOperator) -> Result<SimpleInverseCheck> {
    same_dim(a.dim(), b.dim())?;
    let n = a.dim();
    let ident = DMatrix::<f64>::identity(n, n);
    let am = a.matrix();
    let bm = b.matrix();

    let direct_inner = &ident + bm * am;
    let lu = direct_inner.clone().lu();
    let det_direct = lu.determinant();
    let lhs = am * lu.try_inverse().ok_or(WishartError::Singular)?;

    let ra = psd_sqrt(a);
    let ram = ra.matrix();
    let sym_inner = SelfAdjointOperator::new(ram * bm * ram)?;
    let det_symmetric = det_one_plus(&sym_inner)?;
    let rhs = ram * inverse(&(&ident + sym_inner.matrix()))? * ram;

    let residual = (lhs - rhs).norm();
    let det_relative_diff = (det_direct - det_symmetric).abs() / det_symmetric.abs();
    Ok(SimpleInverseCheck {
        residual,
        det_direct,
        det_symmetric,
        det_relative_diff,
    })
}

/// Wire format shared by all operator types:
/// `{"dim", "entries" (row-major), "complex", "entries_imag"?}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorJson {
    pub dim: usize,
    pub entries: Vec<f64>,
    #[serde(default)]
    pub complex: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries_imag: Option<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl OperatorJson {
    fn real_matrix(&self) -> Result<DMatrix<f64>> {
        if self.dim == 0 {
            return Err(WishartError::EmptyOperator);
        }
        if self.entries.len() != self.dim * self.dim {
            return Err(WishartError::DimMismatch {
                expected: self.dim * self.dim,
                found: self.entries.len(),
            });
        }
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &self.entries))
    }
}

impl From<SelfAdjointOperator> for OperatorJson {
    fn from(m: SelfAdjointOperator) -> Self {
        OperatorJson {
            dim: m.dim(),
            entries: row_major(m.matrix()),
            complex: false,
            entries_imag: None,
        }
    }
}

impl From<PsdOperator> for OperatorJson {
    fn from(m: PsdOperator) -> Self {
        m.0.into()
    }
}

impl From<ComplexOperator> for OperatorJson {
    fn from(m: ComplexOperator) -> Self {
        OperatorJson {
            dim: m.dim(),
            entries: row_major(&m.re()),
            complex: true,
            entries_imag: Some(row_major(&m.im())),
        }
    }
}

impl TryFrom<OperatorJson> for SelfAdjointOperator {
    type Error = WishartError;

    fn try_from(j: OperatorJson) -> Result<Self> {
        if j.complex && j.entries_imag.as_ref().is_some_and(|im| im.iter().any(|&x| x != 0.0)) {
            return Err(WishartError::Parse(
                "complex operator where a self-adjoint one was expected".into(),
            ));
        }
        SelfAdjointOperator::new(j.real_matrix()?)
    }
}

impl TryFrom<OperatorJson> for PsdOperator {
    type Error = WishartError;

    fn try_from(j: OperatorJson) -> Result<Self> {
        PsdOperator::new(SelfAdjointOperator::try_from(j)?)
    }
}

impl TryFrom<OperatorJson> for ComplexOperator {
    type Error = WishartError;

    fn try_from(j: OperatorJson) -> Result<Self> {
        let re = j.real_matrix()?;
        let im = match (&j.entries_imag, j.complex) {
            (Some(im), _) => {
                if im.len() != j.dim * j.dim {
                    return Err(WishartError::DimMismatch {
                        expected: j.dim * j.dim,
                        found: im.len(),
                    });
                }
                DMatrix::from_row_slice(j.dim, j.dim, im)
            }
            (None, false) => DMatrix::zeros(j.dim, j.dim),
            (None, true) => {
                return Err(WishartError::Parse("complex operator without entries_imag".into()))
            }
        };
        ComplexOperator::from_parts(&re, &im)
    }
}

impl From<SelfAdjointOperator> for ComplexOperator {
    fn from(m: SelfAdjointOperator) -> Self {
        ComplexOperator::from_real(m.matrix())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded_psd(n: usize, seed: u64) -> PsdOperator {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        PsdOperator::from_matrix(&g * g.transpose()).unwrap()
    }

    #[test]
    fn symmetrized_on_construction() {
        let m = SelfAdjointOperator::from_row_major(2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.matrix()[(0, 1)], m.matrix()[(1, 0)]);
        assert_eq!(m.matrix()[(0, 1)], 2.5);
    }

    #[test]
    fn rejects_non_square_and_empty() {
        assert!(matches!(
            SelfAdjointOperator::new(DMatrix::zeros(2, 3)),
            Err(WishartError::NotSquare { .. })
        ));
        assert!(matches!(
            SelfAdjointOperator::new(DMatrix::zeros(0, 0)),
            Err(WishartError::EmptyOperator)
        ));
    }

    #[test]
    fn psd_rejects_indefinite_and_clamps_roundoff() {
        let bad = SelfAdjointOperator::from_diagonal(&[1.0, -0.5]).unwrap();
        assert!(matches!(PsdOperator::new(bad), Err(WishartError::NotPsd { .. })));
        let tiny = SelfAdjointOperator::from_diagonal(&[1.0, -1e-13]).unwrap();
        let p = PsdOperator::new(tiny).unwrap();
        assert!(p.eigenvalues().min() >= 0.0);
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        assert_eq!(psd_sqrt(&PsdOperator::identity(5)), PsdOperator::identity(5));
        let d = PsdOperator::from_diagonal(&[4.0, 9.0]).unwrap();
        assert_eq!(psd_sqrt(&d), PsdOperator::from_diagonal(&[2.0, 3.0]).unwrap());
    }

    #[test]
    fn sqrt_reconstructs_random_psd() {
        for seed in 0..10 {
            let m = seeded_psd(7, seed);
            let r = psd_sqrt(&m);
            let rel = (r.matrix() * r.matrix() - m.matrix()).norm() / m.matrix().norm();
            assert!(rel <= 1e-12, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn det_one_plus_examples() {
        assert_eq!(det_one_plus(&SelfAdjointOperator::zeros(3)).unwrap(), 1.0);
        // alpha = 0.5, q = (1, 2): (1 + 1)(1 + 2) = 6
        let alpha = 0.5;
        let b = SelfAdjointOperator::from_diagonal(&[2.0 * alpha * 1.0, 2.0 * alpha * 2.0]).unwrap();
        assert!((det_one_plus(&b).unwrap() - 6.0).abs() < 1e-14);
        let h = DVector::from_column_slice(&[0.6, 0.0, 0.8]);
        let r1 = SelfAdjointOperator::rank_one(&h, 2.5).unwrap();
        assert!((det_one_plus(&r1).unwrap() - 3.5).abs() < 1e-13);
    }

    #[test]
    fn det_one_plus_singular() {
        let b = SelfAdjointOperator::from_diagonal(&[0.3, -1.0]).unwrap();
        assert!(matches!(
            det_one_plus(&b),
            Err(WishartError::SingularDeterminant { .. })
        ));
    }

    #[test]
    fn rank_thresholding() {
        assert_eq!(rank_eps(&SelfAdjointOperator::zeros(4), 1e-10), 0);
        let d = SelfAdjointOperator::from_diagonal(&[5.0, 1e-14, 0.0]).unwrap();
        assert_eq!(rank_eps(&d, 1e-10), 1);
    }

    #[test]
    fn rank_of_gram_matrix() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for alpha in 1..5 {
            let y0 = DMatrix::from_fn(alpha, 9, |_, _| rng.random_range(-1.0..1.0));
            let x = PsdOperator::gram(&y0).unwrap();
            assert_eq!(rank_eps(&x, 1e-10), alpha);
        }
    }

    #[test]
    fn semigroup_examples() {
        let d = GeneratorSpec::Diagonal(vec![-std::f64::consts::PI.powi(2), -4.0 * std::f64::consts::PI.powi(2)]);
        assert_eq!(semigroup_apply(&d, 0.0), DMatrix::identity(2, 2));
        let e = semigroup_apply(&d, 0.1);
        let pi2 = std::f64::consts::PI.powi(2);
        assert_eq!(e[(0, 0)], (-0.1 * pi2).exp());
        assert_eq!(e[(1, 1)], (-0.4 * pi2).exp());
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn dense_semigroup_property() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = GeneratorSpec::Dense(DMatrix::from_fn(6, 6, |_, _| rng.random_range(-2.0..1.0)));
        for (s, t) in [(0.1, 0.2), (0.5, 1.3), (2.0, 0.75)] {
            let lhs = semigroup_apply(&a, s + t);
            let rhs = semigroup_apply(&a, s) * semigroup_apply(&a, t);
            assert!((&lhs - &rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn schatten_examples() {
        let m = SelfAdjointOperator::from_diagonal(&[3.0, -4.0]).unwrap();
        assert!((schatten_norm(&m, 1.0).unwrap() - 7.0).abs() < 1e-14);
        assert!((schatten_norm(&m, 2.0).unwrap() - 5.0).abs() < 1e-14);
        assert_eq!(schatten_norm(&m, f64::INFINITY).unwrap(), 4.0);
        assert!(matches!(schatten_norm(&m, 0.5), Err(WishartError::InvalidOrder(_))));
    }

    #[test]
    fn simple_inverse_examples() {
        let b = seeded_psd(4, 99);
        let zero = simple_inverse_identity_check(&PsdOperator::zeros(4), &b).unwrap();
        assert_eq!(zero.residual, 0.0);
        let ident = simple_inverse_identity_check(&PsdOperator::identity(4), &b).unwrap();
        assert!(ident.residual < 1e-14);
        for seed in 0..10 {
            let a = seeded_psd(8, 2 * seed);
            let b = seeded_psd(8, 2 * seed + 1);
            let chk = simple_inverse_identity_check(&a, &b).unwrap();
            let scale = 1.0 + a.operator_norm() * b.operator_norm();
            assert!(chk.residual <= 1e-10 * scale, "{chk:?}");
            assert!(chk.det_relative_diff <= 1e-10, "{chk:?}");
        }
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let m = seeded_psd(5, 4);
        let sp = m.spectrum();
        for col in sp.vectors.column_iter() {
            let first = col.iter().find(|x| x.abs() > 1e-14).unwrap();
            assert!(*first > 0.0);
        }
        for k in 1..5 {
            assert!(sp.values[k - 1] >= sp.values[k]);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = seeded_psd(3, 8);
        let text = serde_json::to_string(&m).unwrap();
        let back: PsdOperator = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);

        let c = ComplexOperator::from_parts(
            &DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 1.0 / 3.0]),
            &DMatrix::from_row_slice(2, 2, &[-0.7, 1e-300, 2.5, 0.0]),
        )
        .unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"complex\":true"));
        let back: ComplexOperator = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn json_rejects_wrong_length() {
        let err = serde_json::from_str::<SelfAdjointOperator>(r#"{"dim":2,"entries":[1,2,3]}"#);
        assert!(err.is_err());
    }
}
