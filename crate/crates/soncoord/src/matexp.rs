//! Dense matrix exponential by scaling and squaring with Padé approximants.
//!
//! Order-13 diagonal Padé with the double-precision theta thresholds from
//! Higham's revisited scaling-and-squaring analysis; lower orders are used
//! when the 1-norm permits. Relative accuracy is near machine precision for
//! well-scaled inputs, which covers the closed-form linear-ODE solution this
//! crate needs.

use nalgebra::{DMatrix, DVector};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
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
const B13: [f64; 14] = [
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

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// exp(A) for a square matrix. Panics on non-square input; overflow for
/// extreme norms shows up as non-finite entries in the result, which callers
/// check.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    let norm = one_norm(a);
    if norm <= THETA_9 {
        let (u, v) = if norm <= THETA_3 {
            pade_low(a, &B3)
        } else if norm <= THETA_5 {
            pade_low(a, &B5)
        } else if norm <= THETA_7 {
            pade_low(a, &B7)
        } else {
            pade_low(a, &B9)
        };
        return pade_solve(u, v);
    }

    // Scale so that |A/2^s| <= theta_13, apply order 13, square back.
    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as u32;
    let scaled = a / 2f64.powi(s as i32);
    let (u, v) = pade13(&scaled);
    let mut result = pade_solve(u, v);
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// U (odd powers, factored through A) and V (even powers) for orders 3..9.
fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let identity = DMatrix::identity(n, n);
    let a2 = a * a;
    // even powers I, A^2, A^4, ... as needed by the order
    let mut powers = vec![identity.clone(), a2.clone()];
    while powers.len() < b.len() / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u_inner = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    for (k, pow) in powers.iter().enumerate() {
        u_inner += pow * b[2 * k + 1];
        v += pow * b[2 * k];
    }
    (a * u_inner, v)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let identity = DMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &B13;
    let u_high = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u_low = &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &identity * b[1];
    let u = a * (u_high + u_low);
    let v_high = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_high + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &identity * b[0];
    (u, v)
}

/// Padé value (V - U)^-1 (V + U).
fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let numer = &v + &u;
    let denom = v - u;
    match denom.lu().solve(&numer) {
        Some(x) => x,
        // Singular denominators only arise from non-finite input; propagate
        // NaN so callers can detect the failure.
        None => DMatrix::from_element(numer.nrows(), numer.ncols(), f64::NAN),
    }
}

/// exp(diag(d)) helper used by tests and by callers with decoupled systems.
pub fn expm_diagonal(d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&d.map(f64::exp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_of_zero_is_identity() {
        let e = expm(&DMatrix::zeros(3, 3));
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn diagonal_matches_scalar_exp() {
        let d = DVector::from_vec(vec![-1.0, -2.0, 3.5]);
        let e = expm(&DMatrix::from_diagonal(&d));
        assert_relative_eq!(e, expm_diagonal(&d), max_relative = 1e-13);
    }

    #[test]
    fn nilpotent_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&a);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_relative_eq!(e, expected, epsilon = 1e-14);
    }

    #[test]
    fn rotation_gives_sine_cosine() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = expm(&a);
        let (s, c) = 1f64.sin_cos();
        let expected = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert_relative_eq!(e, expected, epsilon = 1e-14);
    }

    // Symmetric 2x2 with eigenpairs ((1,1), 1) and ((1,-1), -3):
    // exp(A) = 1/2 [[e + e^-3, e - e^-3], [e - e^-3, e + e^-3]].
    #[test]
    fn symmetric_witness_closed_form() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 2.0, -1.0]);
        let e = expm(&a);
        let ep = 1f64.exp();
        let em = (-3f64).exp();
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[
                (ep + em) / 2.0,
                (ep - em) / 2.0,
                (ep - em) / 2.0,
                (ep + em) / 2.0,
            ],
        );
        assert_relative_eq!(e, expected, max_relative = 1e-13);
    }

    #[test]
    fn large_norm_uses_squaring_correctly() {
        // |10 A| forces the scaling branch; diagonal keeps the oracle exact.
        let d = DVector::from_vec(vec![-10.0, 4.0, 25.0]);
        let e = expm(&DMatrix::from_diagonal(&d));
        assert_relative_eq!(e, expm_diagonal(&d), max_relative = 1e-12);
    }

    #[test]
    fn semigroup_property_on_random_matrix() {
        // exp((s+t)A) = exp(sA) exp(tA) since sA and tA commute.
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[0.3, -1.2, 0.7, 0.9, -0.5, -0.1, -0.4, 0.6, 0.2],
        );
        let whole = expm(&(&a * 3.0));
        let half = expm(&(&a * 1.5));
        assert_relative_eq!(whole, &half * &half, max_relative = 1e-12);
    }
}
