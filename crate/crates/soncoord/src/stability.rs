//! Stability verdicts for linear loop dynamics.
//!
//! Parallel stability of `theta_dot = A(theta - theta_star)` is equivalent to
//! every eigenvalue of `A` having strictly negative real part, and to the
//! existence of a positive definite `X` with `A^T X + X A` negative definite.
//! Both routes are implemented independently: a Schur eigenvalue test and a
//! direct Lyapunov-equation solve, so each can audit the other.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matexp::expm;
use crate::model::{LinearSystem, ParamVector};

/// Spectra with `|max Re| <= MARGINAL_TOL` are reported as marginal, never
/// stable: asymptotic stability is strict.
pub const MARGINAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Stable,
    Marginal,
    Unstable,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Classification::Stable => write!(f, "STABLE"),
            Classification::Marginal => write!(f, "MARGINAL"),
            Classification::Unstable => write!(f, "UNSTABLE"),
        }
    }
}

/// Eigenvalue-based verdict. `stable` holds iff `margin < 0`, with `margin`
/// the largest real part of the spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub eigenvalues: Vec<Complex<f64>>,
    pub margin: f64,
}

impl StabilityVerdict {
    pub fn classification(&self) -> Classification {
        if self.margin.abs() <= MARGINAL_TOL {
            Classification::Marginal
        } else if self.margin < 0.0 {
            Classification::Stable
        } else {
            Classification::Unstable
        }
    }
}

/// Computes the complex spectrum of a general real matrix and classifies it.
///
/// Non-convergence of the Schur iteration is an explicit failure, never a
/// silent wrong verdict.
pub fn eigen_stability(a: &DMatrix<f64>) -> Result<StabilityVerdict> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "stability test needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or(Error::EigenNonConvergence)?;
    let mut eigenvalues: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap()
            .then(x.im.partial_cmp(&y.im).unwrap())
    });
    let margin = eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityVerdict {
        stable: margin < 0.0,
        eigenvalues,
        margin,
    })
}

/// Per-loop stand-alone stability: entry `i` is true iff `A[i,i] < 0`.
pub fn standalone_check(a: &DMatrix<f64>) -> Vec<bool> {
    assert!(a.is_square(), "stand-alone check needs a square matrix");
    (0..a.nrows()).map(|i| a[(i, i)] < 0.0).collect()
}

/// Solution of `A^T X + X A = -Q` together with the achieved residual.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub x: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub residual: f64,
}

impl LyapunovCertificate {
    /// Quadratic form `(theta - theta_star)^T X (theta - theta_star)`.
    pub fn value(&self, theta: &ParamVector, theta_star: &ParamVector) -> Result<f64> {
        lyapunov_value(&self.x, theta, theta_star)
    }
}

/// Solves `A^T X + X A = -Q` by the vectorized (Kronecker) linear system and
/// certifies the result.
///
/// Sized for a few dozen loops: the dense `n^2 x n^2` solve is simpler than
/// Bartels-Stewart and fast at that scale. Fails with `LyapunovMarginal` when
/// the operator is singular (some eigenvalue pair sums to zero) and with
/// `LyapunovUnstable` when the solution exists but is not positive definite.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<LyapunovCertificate> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::Dimension("A must be square".into()));
    }
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension(format!(
            "Q must be {n}x{n}, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let q_scale = q.norm();
    if (q - q.transpose()).norm() > 1e-10 * q_scale.max(1.0) {
        return Err(Error::InvalidArgument("Q must be symmetric".into()));
    }
    if q.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument(
            "Q must be symmetric positive definite".into(),
        ));
    }

    let at = a.transpose();
    let identity = DMatrix::<f64>::identity(n, n);
    // vec(A^T X) = (I (x) A^T) vec(X), vec(X A) = (A^T (x) I) vec(X)
    let operator = identity.kronecker(&at) + at.kronecker(&identity);
    let rhs = DVector::from_column_slice(q.as_slice()) * -1.0;
    let x_vec = operator
        .lu()
        .solve(&rhs)
        .ok_or(Error::LyapunovMarginal)?;
    let x_raw = DMatrix::from_column_slice(n, n, x_vec.as_slice());

    let x_scale = x_raw.norm().max(f64::MIN_POSITIVE);
    if (&x_raw - x_raw.transpose()).norm() > 1e-10 * x_scale {
        // A nearly singular operator leaves a visibly asymmetric solution.
        return Err(Error::LyapunovMarginal);
    }
    let x = (&x_raw + x_raw.transpose()) * 0.5;

    let residual = (&at * &x + &x * a + q).norm();
    if residual > 1e-8 * q_scale {
        return Err(Error::LyapunovMarginal);
    }

    // Scale-aware positive definiteness test.
    let eigen = x.clone().symmetric_eigen();
    let threshold = 1e-10 * x.trace() / n as f64;
    if x.trace() <= 0.0 || eigen.eigenvalues.iter().any(|&ev| ev <= threshold) {
        return Err(Error::LyapunovUnstable);
    }

    Ok(LyapunovCertificate {
        x,
        q: q.clone(),
        residual,
    })
}

/// Quadratic Lyapunov value `(theta - theta_star)^T X (theta - theta_star)`.
pub fn lyapunov_value(
    x: &DMatrix<f64>,
    theta: &ParamVector,
    theta_star: &ParamVector,
) -> Result<f64> {
    if theta.dim() != theta_star.dim() || x.nrows() != theta.dim() || !x.is_square() {
        return Err(Error::Dimension(format!(
            "X is {}x{}, theta has dimension {}, theta_star {}",
            x.nrows(),
            x.ncols(),
            theta.dim(),
            theta_star.dim()
        )));
    }
    let d = theta.as_vector() - theta_star.as_vector();
    Ok((d.transpose() * x * &d)[(0, 0)])
}

/// Closed-form solution `theta(t) = theta_star + exp(tA)(theta0 - theta_star)`.
pub fn linear_solution(sys: &LinearSystem, theta0: &ParamVector, t: f64) -> Result<ParamVector> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "time must be nonnegative, got {t}"
        )));
    }
    if theta0.dim() != sys.dim() {
        return Err(Error::Dimension(format!(
            "theta0 has dimension {}, system has {}",
            theta0.dim(),
            sys.dim()
        )));
    }
    let propagator = expm(&(sys.a() * t));
    if propagator.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow(format!(
            "matrix exponential at t = {t} (|tA| = {:.3e})",
            (sys.a() * t).norm()
        )));
    }
    let star = sys.equilibrium();
    let value = star.as_vector() + propagator * (theta0.as_vector() - star.as_vector());
    if value.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow(format!("linear solution at t = {t}")));
    }
    Ok(crate::model::param_vector_unchecked(value))
}

/// The two-loop saddle test: true iff `det(J) < 0`, i.e. the Jacobian has two
/// real eigenvalues of opposite sign and the operating point cannot be
/// converged to.
pub fn instability_det_2x2(j: &DMatrix<f64>) -> Result<bool> {
    if j.nrows() != 2 || j.ncols() != 2 {
        return Err(Error::Dimension(format!(
            "determinant test is for 2x2 Jacobians, got {}x{}",
            j.nrows(),
            j.ncols()
        )));
    }
    Ok(j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)] < 0.0)
}
