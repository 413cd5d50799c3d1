use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WishartError};
use crate::operator::{
    rank_eps, same_dim, semigroup_apply, GeneratorSpec, OperatorJson, PsdOperator, SelfAdjointOperator, PSD_TOL,
};
use crate::quadrature::{integrate_with, QuadOptions};

/// Parameters `(α, A, Q)` of one Wishart model at truncation level `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    pub alpha: f64,
    pub generator: GeneratorSpec,
    pub q: PsdOperator,
    pub label: String,
}

impl ModelParams {
    pub fn new(alpha: f64, generator: GeneratorSpec, q: PsdOperator, label: impl Into<String>) -> Result<Self> {
        generator.validate()?;
        let dim = generator.dim();
        same_dim(dim, q.dim())?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(WishartError::InvalidParameter(format!("alpha = {alpha} must be finite and >= 0")));
        }
        Ok(Self {
            dim,
            alpha,
            generator,
            q,
            label: label.into(),
        })
    }

    /// Diagonal generator with diagonal `Q`.
    pub fn diagonal(alpha: f64, a: &[f64], q: &[f64], label: impl Into<String>) -> Result<Self> {
        Self::new(alpha, GeneratorSpec::Diagonal(a.to_vec()), PsdOperator::from_diagonal(q)?, label)
    }

    /// True when both `A` and `Q` are diagonal in the truncation basis.
    pub fn is_jointly_diagonal(&self) -> bool {
        matches!(self.generator, GeneratorSpec::Diagonal(_)) && self.q.is_diagonal()
    }

    /// `α` rounded, when it is within `1e-12` of a non-negative integer.
    pub fn integer_alpha(&self) -> Option<usize> {
        let r = self.alpha.round();
        ((self.alpha - r).abs() <= 1e-12 && r >= 0.0).then_some(r as usize)
    }

    pub fn require_integer_alpha(&self) -> Result<usize> {
        self.integer_alpha().ok_or(WishartError::NonIntegerAlpha(self.alpha))
    }

    pub fn semigroup(&self, t: f64) -> DMatrix<f64> {
        semigroup_apply(&self.generator, t)
    }

    pub fn to_config(&self) -> ModelConfig {
        let generator = match &self.generator {
            GeneratorSpec::Diagonal(a) => GeneratorJson::Diagonal { values: a.clone() },
            GeneratorSpec::Dense(m) => GeneratorJson::Dense {
                values: DenseValues::Flat(m.transpose().as_slice().to_vec()),
            },
        };
        let q = if self.q.is_diagonal() {
            OperatorSpec::Tagged(TaggedOperator::Diagonal {
                values: self.q.diagonal(),
            })
        } else {
            OperatorSpec::Explicit(self.q.clone().into())
        };
        ModelConfig {
            dim: self.dim,
            alpha: self.alpha,
            generator,
            q,
            label: self.label.clone(),
        }
    }
}

/// Deterministic initial value `x₀` with a declared rank bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub x0: PsdOperator,
    pub declared_rank: usize,
}

impl InitialState {
    pub fn new(x0: PsdOperator, declared_rank: usize) -> Result<Self> {
        let rank = rank_eps(&x0, PSD_TOL);
        if rank > declared_rank {
            return Err(WishartError::InvalidParameter(format!(
                "initial state has rank {rank} > declared rank {declared_rank}"
            )));
        }
        Ok(Self { x0, declared_rank })
    }

    /// Declares the numerical rank of `x0`.
    pub fn with_rank(x0: PsdOperator) -> Self {
        let declared_rank = rank_eps(&x0, PSD_TOL);
        Self { x0, declared_rank }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            x0: PsdOperator::zeros(dim),
            declared_rank: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.x0.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratedCovariance {
    pub t: f64,
    pub qt: PsdOperator,
}

/// `(e^{ct} - 1)/c`, with the limit `t` at `c = 0`.
pub(crate) fn expm1_ratio(c: f64, t: f64) -> f64 {
    if c == 0.0 {
        t
    } else {
        (c * t).exp_m1() / c
    }
}

/// `Q_t = ∫₀ᵗ e^{sA}ᵀ Q e^{sA} ds`.
///
/// Diagonal generators use the entrywise closed form
/// `(Q_t)_{jk} = Q_{jk} (e^{(a_j+a_k)t} - 1)/(a_j + a_k)`; dense generators are
/// integrated by adaptive Gauss–Legendre quadrature.
pub fn integrated_covariance(p: &ModelParams, t: f64) -> Result<IntegratedCovariance> {
    integrated_covariance_with(p, t, QuadOptions::default())
}

pub fn integrated_covariance_with(p: &ModelParams, t: f64, opts: QuadOptions) -> Result<IntegratedCovariance> {
    if t < 0.0 || t.is_nan() {
        return Err(WishartError::NegativeTime(t));
    }
    let n = p.dim;
    let q = p.q.matrix();
    let raw = match &p.generator {
        GeneratorSpec::Diagonal(a) => {
            DMatrix::from_fn(n, n, |j, k| if q[(j, k)] == 0.0 { 0.0 } else { q[(j, k)] * expm1_ratio(a[j] + a[k], t) })
        }
        GeneratorSpec::Dense(_) => {
            if t == 0.0 || p.q.is_zero() {
                DMatrix::zeros(n, n)
            } else {
                let integrand = |s: f64| {
                    let e = p.semigroup(s);
                    e.transpose() * q * e
                };
                integrate_with(integrand, 0.0, t, opts).value
            }
        }
    };
    let qt = PsdOperator::project(&SelfAdjointOperator::new(raw)?);
    Ok(IntegratedCovariance { t, qt })
}

/// `∫₀ᵗ ‖e^{sA}√Q‖²_{L₂} ds = trace(Q_t)`.
pub fn integrability_value(p: &ModelParams, t: f64) -> Result<f64> {
    Ok(integrated_covariance(p, t)?.qt.trace())
}

/// `E[X_t] = e^{tA}ᵀ x₀ e^{tA} + α Q_t`.
pub fn mean_state(p: &ModelParams, x0: &PsdOperator, t: f64) -> Result<SelfAdjointOperator> {
    same_dim(p.dim, x0.dim())?;
    let e = p.semigroup(t);
    let qt = integrated_covariance(p, t)?.qt;
    SelfAdjointOperator::new(e.transpose() * x0.matrix() * &e + qt.matrix() * p.alpha)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AdmissibilityReport {
    pub q_injective: bool,
    pub alpha_integer: bool,
    pub rank_ok: bool,
    pub admissible_for_simulation: bool,
}

/// Checks `α ∈ ℕ` and `rank(x₀) ≤ α`; with `strict`, also requires `Q` injective.
pub fn validate_parameters(p: &ModelParams, x0: &InitialState, strict: bool) -> AdmissibilityReport {
    let q_injective = rank_eps(&p.q, PSD_TOL) == p.dim;
    let alpha_integer = p.integer_alpha().is_some();
    let rank_ok = alpha_integer && rank_eps(&x0.x0, PSD_TOL) <= p.alpha.round() as usize;
    let admissible_for_simulation = alpha_integer && rank_ok && (q_injective || !strict) && x0.dim() == p.dim;
    AdmissibilityReport {
        q_injective,
        alpha_integer,
        rank_ok,
        admissible_for_simulation,
    }
}

/// An `α×N` factor `y₀` with `y₀ᵀ y₀ = x₀`: rows are `√λ_k h_kᵀ` over the top
/// `α` eigenpairs in the canonical spectral order.
pub fn factor_initial(x0: &InitialState, alpha: usize) -> Result<DMatrix<f64>> {
    let rank = rank_eps(&x0.x0, PSD_TOL);
    if rank > alpha {
        return Err(WishartError::RankExceedsAlpha { rank, alpha });
    }
    let n = x0.dim();
    let mut y0 = DMatrix::zeros(alpha, n);
    if x0.x0.is_zero() {
        return Ok(y0);
    }
    let sp = x0.x0.spectrum();
    for k in 0..alpha.min(n) {
        let scale = sp.values[k].max(0.0).sqrt();
        if scale > 0.0 {
            y0.row_mut(k).copy_from(&(sp.vectors.column(k).transpose() * scale));
        }
    }
    Ok(y0)
}

/// Seeded `yᵀy` with `y` a `rank×dim` Gaussian matrix scaled by `scale/√dim`.
pub fn random_low_rank(dim: usize, rank: usize, scale: f64, seed: u64) -> PsdOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = scale / (dim as f64).sqrt();
    let y = DMatrix::from_fn(rank, dim, |_, _| { let g: f64 = StandardNormal.sample(&mut rng); c * g });
    PsdOperator::gram(&y).unwrap_or_else(|_| PsdOperator::zeros(dim))
}

/// Wire format of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub alpha: f64,
    pub generator: GeneratorJson,
    pub q: OperatorSpec,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GeneratorJson {
    Diagonal { values: Vec<f64> },
    Dense { values: DenseValues },
}

/// A dense matrix as nested rows or a flat row-major array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DenseValues {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl DenseValues {
    fn to_matrix(&self, dim: usize) -> Result<DMatrix<f64>> {
        let flat: Vec<f64> = match self {
            DenseValues::Rows(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(WishartError::Parse(format!("dense matrix must be {dim}x{dim}")));
                }
                rows.concat()
            }
            DenseValues::Flat(v) => v.clone(),
        };
        if flat.len() != dim * dim {
            return Err(WishartError::DimMismatch {
                expected: dim * dim,
                found: flat.len(),
            });
        }
        Ok(DMatrix::from_row_slice(dim, dim, &flat))
    }
}

/// A symmetric operator in the config format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Tagged(TaggedOperator),
    Explicit(OperatorJson),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TaggedOperator {
    Diagonal { values: Vec<f64> },
    Identity,
    Zero,
}

impl OperatorSpec {
    pub fn resolve(&self, dim: usize) -> Result<SelfAdjointOperator> {
        let m = match self {
            OperatorSpec::Tagged(TaggedOperator::Diagonal { values }) => {
                same_dim(dim, values.len())?;
                SelfAdjointOperator::from_diagonal(values)?
            }
            OperatorSpec::Tagged(TaggedOperator::Identity) => SelfAdjointOperator::identity(dim),
            OperatorSpec::Tagged(TaggedOperator::Zero) => SelfAdjointOperator::zeros(dim),
            OperatorSpec::Explicit(j) => SelfAdjointOperator::try_from(j.clone())?,
        };
        same_dim(dim, m.dim())?;
        Ok(m)
    }

    pub fn resolve_psd(&self, dim: usize) -> Result<PsdOperator> {
        PsdOperator::new(self.resolve(dim)?)
    }
}

impl TryFrom<&ModelConfig> for ModelParams {
    type Error = WishartError;

    fn try_from(c: &ModelConfig) -> Result<Self> {
        if c.dim == 0 {
            return Err(WishartError::EmptyOperator);
        }
        let generator = match &c.generator {
            GeneratorJson::Diagonal { values } => {
                same_dim(c.dim, values.len())?;
                GeneratorSpec::Diagonal(values.clone())
            }
            GeneratorJson::Dense { values } => GeneratorSpec::Dense(values.to_matrix(c.dim)?),
        };
        ModelParams::new(c.alpha, generator, c.q.resolve_psd(c.dim)?, c.label.clone())
    }
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_config().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = ModelConfig::deserialize(d)?;
        ModelParams::try_from(&c).map_err(serde::de::Error::custom)
    }
}

/// Dirichlet-Laplacian spectrum `a_j = -scale · j²π²`, `j = 1..=n`.
pub fn dirichlet_spectrum(n: usize, scale: f64) -> Vec<f64> {
    (1..=n)
        .map(|j| -scale * (j as f64).powi(2) * std::f64::consts::PI.powi(2))
        .collect()
}

/// Unit vector `e_k` of length `n`.
pub fn basis_vector(n: usize, k: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[k] = 1.0;
    v
}
