//! Extended weak-* pairing on `S₁⁺ × ℝ₊`, the induced metric, and a decay
//! probe for the transition semigroup.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WishartError};
use crate::model::ModelParams;
use crate::operator::{same_dim, PsdOperator, SelfAdjointOperator, PSD_TOL};
use crate::transform::laplace_closed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConePoint {
    pub a: PsdOperator,
    pub x: f64,
}

impl ConePoint {
    pub fn new(a: PsdOperator, x: f64) -> Result<Self> {
        if !x.is_finite() || x < -PSD_TOL {
            return Err(WishartError::InvalidParameter(format!("cone coordinate x = {x}")));
        }
        Ok(Self { a, x: x.max(0.0) })
    }

    pub fn origin(dim: usize) -> Self {
        Self {
            a: PsdOperator::zeros(dim),
            x: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            a: self.a.scale(c),
            x: self.x * c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPair {
    pub b: SelfAdjointOperator,
    pub y: f64,
}

impl TestPair {
    pub fn new(b: SelfAdjointOperator, y: f64) -> Self {
        Self { b, y }
    }

    fn is_unit(&self) -> bool {
        self.b.is_zero() && self.y == 1.0
    }
}

/// Ordered test pairs; the `k`-th (1-indexed) carries weight `2^{-k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    pairs: Vec<TestPair>,
}

impl TestFamily {
    pub fn new(pairs: Vec<TestPair>) -> Result<Self> {
        match pairs.first() {
            Some(first) if first.is_unit() => {}
            _ => return Err(WishartError::EmptyFamily),
        }
        let dim = pairs[0].b.dim();
        for p in &pairs {
            same_dim(dim, p.b.dim())?;
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[TestPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].b.dim()
    }

    pub fn weight(k: usize) -> f64 {
        0.5f64.powi(k as i32 + 1)
    }
}

/// `trace(b a) + (trace(a) + x) y` for any symmetric `a` and real `x`.
pub fn pairing_signed(a: &SelfAdjointOperator, x: f64, q: &TestPair) -> Result<f64> {
    same_dim(a.dim(), q.b.dim())?;
    Ok(a.trace_product(q.b.matrix()) + (a.trace() + x) * q.y)
}

pub fn pairing(p: &ConePoint, q: &TestPair) -> Result<f64> {
    pairing_signed(&p.a, p.x, q)
}

/// Membership of `(a, x)` in the closed cone at the default tolerance.
pub fn cone_membership(a: &SelfAdjointOperator, x: f64) -> bool {
    x.is_finite() && x >= -PSD_TOL && a.spectrum().min() >= -PSD_TOL * a.operator_norm().max(1.0)
}

/// `Σ_k 2^{-k} (|⟨⟨p₁ − p₂, q_k⟩⟩| ∧ 1)` over the family.
pub fn wstar_distance(p1: &ConePoint, p2: &ConePoint, fam: &TestFamily) -> Result<f64> {
    if fam.is_empty() {
        return Err(WishartError::EmptyFamily);
    }
    same_dim(p1.dim(), p2.dim())?;
    let da = p1.a.as_self_adjoint().sub(p2.a.as_self_adjoint())?;
    let dx = p1.x - p2.x;
    let mut d = 0.0;
    for (k, q) in fam.pairs().iter().enumerate() {
        d += TestFamily::weight(k) * pairing_signed(&da, dx, q)?.abs().min(1.0);
    }
    Ok(d)
}

/// Symmetric unit basis: `E_ii` first, then `(E_ij + E_ji)/√2` for `i < j`.
fn symmetric_basis(dim: usize) -> Vec<SelfAdjointOperator> {
    let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        let mut m = nalgebra::DMatrix::zeros(dim, dim);
        m[(i, i)] = 1.0;
        out.push(SelfAdjointOperator::new(m).expect("finite"));
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..dim {
        for j in (i + 1)..dim {
            let mut m = nalgebra::DMatrix::zeros(dim, dim);
            m[(i, j)] = r;
            m[(j, i)] = r;
            out.push(SelfAdjointOperator::new(m).expect("finite"));
        }
    }
    out
}

/// Depth from which the canonical family separates points of the truncation.
pub fn full_separation_depth(dim: usize) -> usize {
    3 * dim * (dim + 1) / 2 + 1
}

/// `(0, 1)` followed by each symmetric basis element paired with
/// `y = 0, 1, -1`, cycling until `depth` pairs are produced.
pub fn canonical_test_family(dim: usize, depth: usize) -> Result<TestFamily> {
    if depth == 0 {
        return Err(WishartError::EmptyFamily);
    }
    if dim == 0 {
        return Err(WishartError::EmptyOperator);
    }
    let mut pairs = vec![TestPair::new(SelfAdjointOperator::zeros(dim), 1.0)];
    let cycle: Vec<TestPair> = symmetric_basis(dim)
        .into_iter()
        .flat_map(|b| [0.0, 1.0, -1.0].map(|y| TestPair::new(b.clone(), y)))
        .collect();
    pairs.extend(cycle.iter().cycle().take(depth - 1).cloned());
    TestFamily::new(pairs)
}

/// `e^{-zw} E[exp(-trace((v + wI) X_t)) | X_0 = s·x_base]` for each scale `s`.
pub fn feller_decay_probe(
    p: &ModelParams,
    v: &PsdOperator,
    w: f64,
    z: f64,
    t: f64,
    x_base: &PsdOperator,
    scales: &[f64],
) -> Result<Vec<f64>> {
    let lo = v.spectrum().min();
    if !(lo > 0.0) {
        return Err(WishartError::NotStrictlyPositive(lo));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(WishartError::InvalidParameter(format!("w = {w} must be positive")));
    }
    if !(z >= 0.0 && z.is_finite()) {
        return Err(WishartError::InvalidParameter(format!("z = {z} must be non-negative")));
    }
    if scales.iter().any(|s| !(*s >= 0.0)) || scales.windows(2).any(|s| !(s[1] > s[0])) {
        return Err(WishartError::InvalidParameter("scales must be non-negative and increasing".into()));
    }
    let test = v.add(&PsdOperator::identity(v.dim()).scale(w))?;
    let prefactor = (-z * w).exp();
    scales
        .iter()
        .map(|&s| Ok(prefactor * laplace_closed(p, &x_base.scale(s), &test, t)?.value.re))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_low_rank;
    use proptest::prelude::*;

    fn diag(d: &[f64]) -> PsdOperator {
        PsdOperator::from_diagonal(d).unwrap()
    }

    #[test]
    fn pairing_examples() {
        let unit = TestPair::new(SelfAdjointOperator::zeros(2), 1.0);
        assert_eq!(pairing(&ConePoint::new(PsdOperator::zeros(2), 1.0).unwrap(), &unit).unwrap(), 1.0);
        assert_eq!(pairing(&ConePoint::new(PsdOperator::identity(2), 0.0).unwrap(), &unit).unwrap(), 2.0);
        let q = TestPair::new(SelfAdjointOperator::from_diagonal(&[3.0, 4.0]).unwrap(), 7.0);
        assert_eq!(pairing(&ConePoint::new(diag(&[1.0, 2.0]), 5.0).unwrap(), &q).unwrap(), 67.0);
        let q3 = TestPair::new(SelfAdjointOperator::zeros(3), 1.0);
        assert!(matches!(pairing(&ConePoint::origin(2), &q3), Err(WishartError::DimMismatch { .. })));
    }

    #[test]
    fn membership_examples() {
        assert!(cone_membership(&SelfAdjointOperator::identity(2), 1.0));
        assert!(!cone_membership(&SelfAdjointOperator::from_diagonal(&[1.0, -1.0]).unwrap(), 0.0));
        assert!(!cone_membership(&SelfAdjointOperator::identity(2), -0.5));
    }

    #[test]
    fn family_enumeration() {
        let f = canonical_test_family(3, 1).unwrap();
        assert_eq!(f.len(), 1);
        assert!(f.pairs()[0].is_unit());
        let f = canonical_test_family(1, 4).unwrap();
        let ys: Vec<f64> = f.pairs().iter().map(|p| p.y).collect();
        assert_eq!(ys, vec![1.0, 0.0, 1.0, -1.0]);
        assert!(f.pairs()[1..].iter().all(|p| p.b.matrix()[(0, 0)] == 1.0));
        assert_eq!(full_separation_depth(2), 10);
        assert!(matches!(canonical_test_family(2, 0), Err(WishartError::EmptyFamily)));
        let bad = vec![TestPair::new(SelfAdjointOperator::identity(2), 1.0)];
        assert!(matches!(TestFamily::new(bad), Err(WishartError::EmptyFamily)));
    }

    #[test]
    fn distance_examples() {
        let fam = canonical_test_family(1, 1).unwrap();
        let p1 = ConePoint::origin(1);
        let p2 = ConePoint::new(PsdOperator::zeros(1), 2.0).unwrap();
        assert_eq!(wstar_distance(&p1, &p2, &fam).unwrap(), 0.5);
        assert_eq!(wstar_distance(&p2, &p2, &fam).unwrap(), 0.0);
    }

    #[test]
    fn separation_at_depth_19() {
        let fam = canonical_test_family(2, 19).unwrap();
        let p = ConePoint::new(diag(&[1.0, 1.0]), 0.0).unwrap();
        let off = PsdOperator::from_matrix(nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 1e-3, 1e-3, 1.0])).unwrap();
        let q = ConePoint::new(off, 0.0).unwrap();
        assert!(wstar_distance(&p, &q, &fam).unwrap() > 0.0);
    }

    #[test]
    fn decay_probe() {
        let p = ModelParams::diagonal(2.0, &[-1.0, -0.5], &[1.0, 0.5], "f").unwrap();
        let v = diag(&[0.5, 1.0]);
        let xb = random_low_rank(2, 2, 1.0, 2);
        let vals = feller_decay_probe(&p, &v, 0.1, 0.0, 0.3, &xb, &[1.0, 10.0, 100.0]).unwrap();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        let at0a = feller_decay_probe(&p, &v, 0.1, 0.0, 0.3, &xb, &[0.0]).unwrap();
        let at0b = feller_decay_probe(&p, &v, 0.1, 0.0, 0.3, &random_low_rank(2, 1, 3.0, 9), &[0.0]).unwrap();
        assert_eq!(at0a, at0b);
        let small_w = feller_decay_probe(&p, &v, 1e-12, 2.0, 0.3, &xb, &[0.0]).unwrap()[0];
        let no_w = laplace_closed(&p, &PsdOperator::zeros(2), &v, 0.3).unwrap().value.re;
        assert!((small_w - no_w).abs() < 1e-10);
        assert!(matches!(
            feller_decay_probe(&p, &diag(&[0.0, 1.0]), 0.1, 0.0, 0.3, &xb, &[1.0]),
            Err(WishartError::NotStrictlyPositive(_))
        ));
    }

    fn point(dim: usize) -> impl Strategy<Value = ConePoint> {
        (0u64..10_000, 0.0f64..3.0, 0.0f64..2.0, 1usize..=4)
            .prop_map(move |(seed, x, s, r)| ConePoint::new(random_low_rank(dim, r.min(dim), s, seed), x).unwrap())
    }

    proptest! {
        #[test]
        fn triangle_and_symmetry(p in point(3), q in point(3), r in point(3)) {
            let fam = canonical_test_family(3, full_separation_depth(3)).unwrap();
            let pq = wstar_distance(&p, &q, &fam).unwrap();
            prop_assert_eq!(pq, wstar_distance(&q, &p, &fam).unwrap());
            let pr = wstar_distance(&p, &r, &fam).unwrap();
            let qr = wstar_distance(&q, &r, &fam).unwrap();
            prop_assert!(pr <= pq + qr + 1e-15);
        }

        #[test]
        fn cone_is_closed_under_scaling(p in point(3), c in 0.0f64..50.0) {
            let s = p.scale(c);
            prop_assert!(cone_membership(s.a.as_self_adjoint(), s.x));
        }

        #[test]
        fn limits_stay_in_cone(p in point(2), k in 1u32..40) {
            // (a + 2^{-k}·I, x + 2^{-k}) converges in pairing to (a, x).
            let eps = 0.5f64.powi(k as i32);
            let a = p.a.add(&PsdOperator::identity(2).scale(eps)).unwrap();
            let approx = ConePoint::new(a, p.x + eps).unwrap();
            let fam = canonical_test_family(2, full_separation_depth(2)).unwrap();
            prop_assert!(wstar_distance(&approx, &p, &fam).unwrap() <= 4.0 * eps);
            prop_assert!(cone_membership(p.a.as_self_adjoint(), p.x));
        }
    }
}
