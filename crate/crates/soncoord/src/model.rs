//! Parameter vectors, vector fields and the interaction graph.
//!
//! A control loop monitors one performance indicator and adjusts one scalar
//! parameter. Running `I` loops in parallel yields the dynamics
//! `theta_dot = F(theta)` for a vector field `F` over the parameter vector.
//! This module provides the field abstraction, its affine specialization with
//! a certified equilibrium, the zero-finding construction `F_i = f_i - target_i`,
//! stand-alone masking (all loops but one frozen), and the neighbor graph
//! induced by a Jacobian.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reject matrices with reciprocal condition number below this bound.
/// Coordination quality degrades silently on nearly singular systems.
pub const RCOND_MIN: f64 = 1e-12;

/// Ordered real vector of loop parameters. Entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: DVector<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(values))
    }

    pub fn from_vector(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "parameter vector must have dimension >= 1".into(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "parameter vector entry {i} is not finite"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    /// Euclidean distance to another vector of the same dimension.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        (&self.values - &other.values).norm()
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Update direction `F(theta)` of the parallel loops.
///
/// Implementations must be deterministic for fixed inputs; stochastic
/// performance indicators carry their own frozen randomness so that repeated
/// evaluation (e.g. for finite-difference Jacobians) is meaningful.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    /// Evaluates the field. Panics if `theta.dim() != self.dim()`.
    fn eval(&self, theta: &ParamVector) -> ParamVector;
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, theta: &ParamVector) -> ParamVector {
        (**self).eval(theta)
    }
}

/// Affine field `F(theta) = A theta + b`.
#[derive(Debug, Clone)]
pub struct LinearField {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl LinearField {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), self.dim(), "field evaluated at wrong dimension");
        ParamVector {
            values: &self.a * theta.as_vector() + &self.b,
        }
    }
}

/// Builds the affine field `theta -> A theta + b`.
pub fn make_linear_field(a: DMatrix<f64>, b: DVector<f64>) -> Result<LinearField> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "A is {}x{} but b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Ok(LinearField { a, b })
}

/// Affine dynamics with a certified equilibrium `theta_star = -A^-1 b`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    theta_star: DVector<f64>,
}

impl LinearSystem {
    /// Solves for the equilibrium and validates invertibility.
    ///
    /// Fails with the condition estimate when `1/cond(A) < RCOND_MIN`, and
    /// when the equilibrium residual `|A theta_star + b|` exceeds
    /// `1e-9 * |b|`.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "A is {}x{} but b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let rcond = reciprocal_condition(&a);
        if rcond < RCOND_MIN {
            return Err(Error::IllConditioned { rcond });
        }
        let lu = a.clone().lu();
        let theta_star = lu
            .solve(&(-&b))
            .ok_or(Error::IllConditioned { rcond })?;
        let residual = (&a * &theta_star + &b).norm();
        let scale = b.norm().max(f64::MIN_POSITIVE);
        if residual > 1e-9 * scale {
            return Err(Error::IllConditioned { rcond });
        }
        Ok(Self { a, b, theta_star })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.b
    }

    /// The unique zero of the field, `theta_star = -A^-1 b`.
    pub fn equilibrium(&self) -> ParamVector {
        ParamVector {
            values: self.theta_star.clone(),
        }
    }

    pub fn field(&self) -> LinearField {
        LinearField {
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }
}

/// Smallest over largest singular value; 0.0 for rank-deficient input.
pub fn reciprocal_condition(a: &DMatrix<f64>) -> f64 {
    let svd = a.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Zero-finding loop specification: indicators `f` with per-loop targets.
///
/// The induced field is `F_i(theta) = f_i(theta) - target_i`, driving each
/// indicator to its target level.
pub struct ZeroFindingSpec {
    kpi: Box<dyn Fn(&ParamVector) -> DVector<f64> + Send + Sync>,
    targets: DVector<f64>,
}

impl ZeroFindingSpec {
    pub fn new(
        kpi: impl Fn(&ParamVector) -> DVector<f64> + Send + Sync + 'static,
        targets: DVector<f64>,
    ) -> Self {
        Self {
            kpi: Box::new(kpi),
            targets,
        }
    }
}

/// Field with `eval(theta)_i = f_i(theta) - target_i`.
pub struct ZeroFindingField {
    spec: ZeroFindingSpec,
}

impl VectorField for ZeroFindingField {
    fn dim(&self) -> usize {
        self.spec.targets.len()
    }

    fn eval(&self, theta: &ParamVector) -> ParamVector {
        let f = (self.spec.kpi)(theta);
        assert_eq!(
            f.len(),
            self.spec.targets.len(),
            "indicator output dimension does not match targets"
        );
        ParamVector {
            values: f - &self.spec.targets,
        }
    }
}

pub fn zero_finding_field(spec: ZeroFindingSpec) -> ZeroFindingField {
    ZeroFindingField { spec }
}

/// Stand-alone mode: loop `index` runs while every other parameter is pinned
/// to `frozen`. Component `index` follows the inner field evaluated at the
/// frozen point (with the live coordinate substituted); all other components
/// are exactly zero.
#[derive(Debug, Clone)]
pub struct StandaloneField<F: VectorField> {
    inner: F,
    index: usize,
    frozen: ParamVector,
}

impl<F: VectorField> VectorField for StandaloneField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), self.dim(), "field evaluated at wrong dimension");
        let mut point = self.frozen.values.clone();
        point[self.index] = theta[self.index];
        let full = self.inner.eval(&ParamVector { values: point });
        let mut out = DVector::zeros(self.dim());
        out[self.index] = full[self.index];
        ParamVector { values: out }
    }
}

pub fn standalone_field<F: VectorField>(
    field: F,
    index: usize,
    frozen: ParamVector,
) -> Result<StandaloneField<F>> {
    if index >= field.dim() {
        return Err(Error::InvalidArgument(format!(
            "stand-alone index {index} out of range for dimension {}",
            field.dim()
        )));
    }
    if frozen.dim() != field.dim() {
        return Err(Error::Dimension(format!(
            "frozen point has dimension {}, field has {}",
            frozen.dim(),
            field.dim()
        )));
    }
    Ok(StandaloneField {
        inner: field,
        index,
        frozen,
    })
}

/// Neighbor sets induced by a Jacobian: loop `j` is a neighbor of loop `i`
/// when `|d f_j / d theta_i| > tol`, i.e. adjusting `theta_i` moves the
/// indicator monitored by `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    neighbors: Vec<BTreeSet<usize>>,
    tolerance: f64,
}

impl InteractionGraph {
    pub fn neighbors(&self, i: usize) -> &BTreeSet<usize> {
        &self.neighbors[i]
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn dim(&self) -> usize {
        self.neighbors.len()
    }
}

/// Scale-free default threshold `1e-8 * max|J|`.
pub fn default_interaction_tolerance(jacobian: &DMatrix<f64>) -> f64 {
    1e-8 * jacobian.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn interaction_graph(jacobian: &DMatrix<f64>, tol: f64) -> Result<InteractionGraph> {
    if !jacobian.is_square() {
        return Err(Error::Dimension(format!(
            "Jacobian must be square, got {}x{}",
            jacobian.nrows(),
            jacobian.ncols()
        )));
    }
    if tol < 0.0 {
        return Err(Error::InvalidArgument(
            "interaction tolerance must be >= 0".into(),
        ));
    }
    let n = jacobian.nrows();
    let neighbors = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| jacobian[(j, i)].abs() > tol)
                .collect::<BTreeSet<usize>>()
        })
        .collect();
    Ok(InteractionGraph {
        neighbors,
        tolerance: tol,
    })
}

pub(crate) fn param_vector_unchecked(values: DVector<f64>) -> ParamVector {
    ParamVector { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn witness() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 2.0, -1.0])
    }

    #[test]
    fn linear_field_direct_substitution() {
        let f = make_linear_field(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let out = f.eval(&ParamVector::new(vec![0.0]).unwrap());
        assert_eq!(out.as_slice(), &[1.0]);
    }

    #[test]
    fn linear_field_row_sums() {
        let f = make_linear_field(witness(), DVector::zeros(2)).unwrap();
        let out = f.eval(&ParamVector::new(vec![1.0, 1.0]).unwrap());
        assert_eq!(out.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn linear_field_vanishes_at_equilibrium() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let f = make_linear_field(a, b).unwrap();
        let out = f.eval(&ParamVector::new(vec![1.0, 1.0]).unwrap());
        assert_relative_eq!(out.as_vector().norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_field_rejects_dimension_mismatch() {
        let err = make_linear_field(witness(), DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn equilibrium_negated_identity() {
        let sys = LinearSystem::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0])),
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        assert_relative_eq!(sys.equilibrium()[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sys.equilibrium()[1], 2.0, epsilon = 1e-12);
    }

    // Oracle: A theta = -b with A = [[-1,2],[2,-1]], b = [-1,-1] gives
    // -t1 + 2 t2 = 1 and 2 t1 - t2 = 1, hence theta_star = (1, 1).
    #[test]
    fn equilibrium_witness_2x2() {
        let sys = LinearSystem::new(witness(), DVector::from_vec(vec![-1.0, -1.0])).unwrap();
        let star = sys.equilibrium();
        assert_relative_eq!(star[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(star[1], 1.0, epsilon = 1e-12);
        let residual = (sys.a() * star.as_vector() + sys.offset()).norm();
        assert!(residual <= 1e-9 * sys.offset().norm());
    }

    #[test]
    fn equilibrium_rejects_singular() {
        let err = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap_err();
        match err {
            Error::IllConditioned { rcond } => assert!(rcond < RCOND_MIN),
            other => panic!("expected IllConditioned, got {other:?}"),
        }
    }

    #[test]
    fn zero_finding_identity_map() {
        let field = zero_finding_field(ZeroFindingSpec::new(
            |theta: &ParamVector| theta.as_vector().clone(),
            DVector::zeros(1),
        ));
        let out = field.eval(&ParamVector::new(vec![3.5]).unwrap());
        assert_eq!(out.as_slice(), &[3.5]);
    }

    #[test]
    fn zero_finding_matches_linear_field() {
        let a = witness();
        let b = DVector::from_vec(vec![0.3, -0.7]);
        let linear = make_linear_field(a.clone(), b.clone()).unwrap();
        let zf = zero_finding_field(ZeroFindingSpec::new(
            move |theta: &ParamVector| &a * theta.as_vector(),
            -b,
        ));
        for point in [[0.0, 0.0], [1.0, -2.0], [0.25, 10.0]] {
            let theta = ParamVector::new(point.to_vec()).unwrap();
            let lhs = zf.eval(&theta);
            let rhs = linear.eval(&theta);
            assert_eq!(lhs.as_slice(), rhs.as_slice());
        }
    }

    #[test]
    fn zero_finding_constant_at_target_is_zero() {
        let field = zero_finding_field(ZeroFindingSpec::new(
            |_: &ParamVector| DVector::from_vec(vec![2.0, 3.0]),
            DVector::from_vec(vec![2.0, 3.0]),
        ));
        let out = field.eval(&ParamVector::zeros(2));
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn standalone_masks_other_components() {
        let f = make_linear_field(witness(), DVector::zeros(2)).unwrap();
        let sa = standalone_field(f, 0, ParamVector::new(vec![0.0, 0.0]).unwrap()).unwrap();
        let out = sa.eval(&ParamVector::new(vec![1.0, 0.0]).unwrap());
        assert_eq!(out.as_slice(), &[-1.0, 0.0]);
        // component 1 is zero whatever theta_1 claims to be
        let out = sa.eval(&ParamVector::new(vec![1.0, 99.0]).unwrap());
        assert_eq!(out.as_slice(), &[-1.0, 0.0]);
    }

    #[test]
    fn standalone_second_index() {
        let f = make_linear_field(witness(), DVector::zeros(2)).unwrap();
        let sa = standalone_field(f, 1, ParamVector::new(vec![0.0, 0.0]).unwrap()).unwrap();
        let out = sa.eval(&ParamVector::new(vec![0.0, 1.0]).unwrap());
        assert_eq!(out.as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn standalone_rejects_bad_index() {
        let f = make_linear_field(witness(), DVector::zeros(2)).unwrap();
        let err = standalone_field(f, 2, ParamVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn interaction_graph_diagonal() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0, 0.5]));
        let g = interaction_graph(&j, 0.0).unwrap();
        for i in 0..3 {
            assert_eq!(g.neighbors(i).iter().copied().collect::<Vec<_>>(), vec![i]);
        }
    }

    #[test]
    fn interaction_graph_full_witness() {
        let g = interaction_graph(&witness(), 0.0).unwrap();
        assert_eq!(g.neighbors(0).iter().copied().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(g.neighbors(1).iter().copied().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn interaction_graph_thresholds_weak_coupling() {
        let j = DMatrix::from_row_slice(2, 2, &[-1.0, 0.01, 0.01, -1.0]);
        let g = interaction_graph(&j, 0.1).unwrap();
        assert_eq!(g.neighbors(0).iter().copied().collect::<Vec<_>>(), vec![0]);
        assert_eq!(g.neighbors(1).iter().copied().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
        assert!(ParamVector::new(vec![]).is_err());
    }
}
