//! Matrix exponential by scaling and squaring with diagonal Padé approximants.
//!
//! Degree selection and the `THETA_*` thresholds follow Higham's 2005 analysis
//! (1-norm bounds for which the Padé backward error stays below unit roundoff).

use nalgebra::DMatrix;

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.53939833006323e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068;
const THETA_13: f64 = 5.371920351148152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Maximum absolute column sum.
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(a)` for a square real matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    let n = a.nrows();
    let norm = one_norm(a);
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }
    if !norm.is_finite() {
        return DMatrix::from_element(n, n, f64::NAN);
    }
    if norm <= THETA_3 {
        return pade_low(a, &PADE_3);
    }
    if norm <= THETA_5 {
        return pade_low(a, &PADE_5);
    }
    if norm <= THETA_7 {
        return pade_low(a, &PADE_7);
    }
    if norm <= THETA_9 {
        return pade_low(a, &PADE_9);
    }
    let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
    let scaled = a * 2f64.powi(-s);
    let mut r = pade_13(&scaled);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    // U = A * sum_{odd k} b_k A^{k-1},  V = sum_{even k} b_k A^k
    let mut odd = &ident * b[1];
    let mut even = &ident * b[0];
    let mut power = ident.clone();
    let mut k = 2;
    while k < b.len() {
        power = &power * &a2;
        even += &power * b[k];
        if k + 1 < b.len() {
            odd += &power * b[k + 1];
        }
        k += 2;
    }
    let u = a * odd;
    solve_pade(&even, &u)
}

fn pade_13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let b = &PADE_13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    solve_pade(&v, &u)
}

fn solve_pade(v: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let lhs = v - u;
    let rhs = v + u;
    lhs.lu()
        .solve(&rhs)
        .unwrap_or_else(|| DMatrix::from_element(v.nrows(), v.ncols(), f64::NAN))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_gives_identity() {
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(expm(&z), DMatrix::identity(4, 4));
    }

    #[test]
    fn nilpotent_is_exact_polynomial() {
        // exp([[0,1],[0,0]] * c) = [[1,c],[0,1]]
        for c in [1e-3, 0.1, 1.0, 7.5, 40.0] {
            let m = DMatrix::from_row_slice(2, 2, &[0.0, c, 0.0, 0.0]);
            let e = expm(&m);
            assert!((e[(0, 0)] - 1.0).abs() < 1e-14);
            assert!((e[(0, 1)] - c).abs() <= 1e-14 * c.max(1.0));
            assert!(e[(1, 0)].abs() < 1e-14);
        }
    }

    #[test]
    fn rotation_generator() {
        for theta in [0.01, 0.2, 0.9, 2.0, 30.0] {
            let m = DMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]);
            let e = expm(&m);
            let expected =
                DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
            assert!((e - expected).norm() < 1e-12 * theta.max(1.0));
        }
    }

    #[test]
    fn agrees_with_nalgebra_exp() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[-1.3, 0.4, 2.2, 0.7, -3.1, 0.05, -0.6, 1.9, -0.2],
        );
        for scale in [0.001, 0.3, 1.0, 4.0] {
            let a = &m * scale;
            let ours = expm(&a);
            let reference = a.clone().exp();
            assert!((&ours - &reference).norm() <= 1e-12 * reference.norm());
        }
    }
}
