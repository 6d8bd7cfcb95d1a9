//! Coordination-matrix synthesis and the distributed update rule.
//!
//! When parallel loops interact, `A` is replaced by `C A` for a mixing matrix
//! `C`, equivalently each loop now monitors the combined indicator
//! `c_i = sum_j C[i,j] f_j`. The gradient-flow choice `C = -A^T W` descends
//! the weighted square error `V = sum_i w_i (f_i - target_i)^2` and always
//! stabilizes an invertible linear system; it is also the only choice here
//! that each loop can compute from neighbor-local data.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LinearSystem, ParamVector, VectorField};
use crate::stability::{eigen_stability, StabilityVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    GradientFlow,
    Inverse,
    Custom,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::GradientFlow => write!(f, "gradient_flow"),
            Provenance::Inverse => write!(f, "inverse"),
            Provenance::Custom => write!(f, "custom"),
        }
    }
}

/// A coordination matrix with a record of how it was produced.
#[derive(Debug, Clone)]
pub struct Coordinator {
    c: DMatrix<f64>,
    weights: Option<DVector<f64>>,
    provenance: Provenance,
}

impl Coordinator {
    /// Gradient-flow synthesis `C = -A^T W` for strictly positive weights.
    pub fn gradient_flow(a: &DMatrix<f64>, weights: &DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != weights.len() {
            return Err(Error::Dimension(format!(
                "A is {}x{}, weights have length {}",
                a.nrows(),
                a.ncols(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|&w| w <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight {i} must be strictly positive, got {}",
                weights[i]
            )));
        }
        let c = -a.transpose() * DMatrix::from_diagonal(weights);
        Ok(Self {
            c,
            weights: Some(weights.clone()),
            provenance: Provenance::GradientFlow,
        })
    }

    /// `C = A^-1`; stabilizes but is not distributed. Kept for testing.
    pub fn inverse(a: &DMatrix<f64>) -> Result<Self> {
        let rcond = crate::model::reciprocal_condition(a);
        if rcond < crate::model::RCOND_MIN {
            return Err(Error::IllConditioned { rcond });
        }
        let c = a
            .clone()
            .try_inverse()
            .ok_or(Error::IllConditioned { rcond })?;
        Ok(Self {
            c,
            weights: None,
            provenance: Provenance::Inverse,
        })
    }

    pub fn custom(c: DMatrix<f64>) -> Result<Self> {
        if !c.is_square() {
            return Err(Error::Dimension(format!(
                "coordination matrix must be square, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(Self {
            c,
            weights: None,
            provenance: Provenance::Custom,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn weights(&self) -> Option<&DVector<f64>> {
        self.weights.as_ref()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Gradient-flow coordinator; default weights are all one (no published
/// selection rule, and uniform weights keep the spectrum interpretable).
pub fn synthesize_gradient_coordinator(
    a: &DMatrix<f64>,
    weights: &DVector<f64>,
) -> Result<Coordinator> {
    Coordinator::gradient_flow(a, weights)
}

/// Field `theta -> C F(theta)` for any inner field.
pub struct MixedField<F: VectorField> {
    c: DMatrix<f64>,
    inner: F,
}

impl<F: VectorField> MixedField<F> {
    pub fn new(c: DMatrix<f64>, inner: F) -> Result<Self> {
        if c.nrows() != inner.dim() || !c.is_square() {
            return Err(Error::Dimension(format!(
                "mixing matrix is {}x{}, field has dimension {}",
                c.nrows(),
                c.ncols(),
                inner.dim()
            )));
        }
        Ok(Self { c, inner })
    }
}

impl<F: VectorField> VectorField for MixedField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, theta: &ParamVector) -> ParamVector {
        let f = self.inner.eval(theta);
        crate::model::param_vector_unchecked(&self.c * f.as_vector())
    }
}

/// Coordinated linear dynamics `theta_dot = C (A theta + b)`.
pub fn coordinated_field(
    coord: &Coordinator,
    sys: &LinearSystem,
) -> Result<MixedField<crate::model::LinearField>> {
    MixedField::new(coord.matrix().clone(), sys.field())
}

/// Combined indicators `c = C f` seen by each loop under coordination.
pub fn coordinated_kpi(coord: &Coordinator, kpi_values: &DVector<f64>) -> Result<DVector<f64>> {
    if kpi_values.len() != coord.dim() {
        return Err(Error::Dimension(format!(
            "coordinator has dimension {}, got {} indicator values",
            coord.dim(),
            kpi_values.len()
        )));
    }
    Ok(coord.matrix() * kpi_values)
}

/// Per-loop coordinated update from neighbor-local data only.
///
/// Returns `-sum_j 2 w_j (df_j/dtheta_i) (f_j - target_j)` over the neighbor
/// set: component `i` of the descent direction of the weighted square error.
/// All three maps must be keyed by exactly the same neighbor set. The weight
/// inside the sum is the neighbor's `w_j`, which is what the matrix form
/// `-A^T W A` expands to.
pub fn distributed_update_direction(
    partials: &BTreeMap<usize, f64>,
    residuals: &BTreeMap<usize, f64>,
    weights: &BTreeMap<usize, f64>,
) -> Result<f64> {
    let keys: Vec<&usize> = partials.keys().collect();
    if residuals.keys().collect::<Vec<_>>() != keys || weights.keys().collect::<Vec<_>>() != keys {
        return Err(Error::InvalidArgument(
            "partials, residuals and weights must share the same neighbor keys".into(),
        ));
    }
    Ok(partials
        .iter()
        .map(|(j, dfj)| -2.0 * weights[j] * dfj * residuals[j])
        .sum())
}

/// Eigenvalue verdict for the coordinated dynamics `C A`.
pub fn verify_coordinated(coord: &Coordinator, a: &DMatrix<f64>) -> Result<StabilityVerdict> {
    if a.nrows() != coord.dim() || !a.is_square() {
        return Err(Error::Dimension(format!(
            "coordinator has dimension {}, A is {}x{}",
            coord.dim(),
            a.nrows(),
            a.ncols()
        )));
    }
    eigen_stability(&(coord.matrix() * a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn witness() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 2.0, -1.0])
    }

    fn ones(n: usize) -> DVector<f64> {
        DVector::from_element(n, 1.0)
    }

    #[test]
    fn gradient_flow_on_decoupled_system_is_identity() {
        let coord = Coordinator::gradient_flow(&(-DMatrix::identity(2, 2)), &ones(2)).unwrap();
        assert_relative_eq!(coord.matrix(), &DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn gradient_flow_witness_spectrum() {
        let coord = Coordinator::gradient_flow(&witness(), &ones(2)).unwrap();
        let expected_c = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 1.0]);
        assert_relative_eq!(coord.matrix(), &expected_c, epsilon = 1e-15);

        let ca = coord.matrix() * witness();
        let expected_ca = DMatrix::from_row_slice(2, 2, &[-5.0, 4.0, 4.0, -5.0]);
        assert_relative_eq!(&ca, &expected_ca, epsilon = 1e-15);

        let verdict = verify_coordinated(&coord, &witness()).unwrap();
        assert!(verdict.stable);
        assert_relative_eq!(verdict.eigenvalues[0].re, -9.0, epsilon = 1e-9);
        assert_relative_eq!(verdict.eigenvalues[1].re, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn gradient_flow_uneven_weights() {
        let w = DVector::from_vec(vec![2.0, 1.0]);
        let coord = Coordinator::gradient_flow(&witness(), &w).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -4.0, 1.0]);
        assert_relative_eq!(coord.matrix(), &expected, epsilon = 1e-15);
    }

    #[test]
    fn gradient_flow_rejects_nonpositive_weight() {
        let err = Coordinator::gradient_flow(&witness(), &DVector::from_vec(vec![1.0, 0.0]))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn identity_coordinator_is_a_no_op() {
        let sys = LinearSystem::new(witness(), DVector::from_vec(vec![0.5, -0.5])).unwrap();
        let coord = Coordinator::custom(DMatrix::identity(2, 2)).unwrap();
        let mixed = coordinated_field(&coord, &sys).unwrap();
        let theta = ParamVector::new(vec![0.7, -1.3]).unwrap();
        assert_eq!(
            mixed.eval(&theta).as_slice(),
            sys.field().eval(&theta).as_slice()
        );
        assert!(!verify_coordinated(&coord, &witness()).unwrap().stable);
    }

    #[test]
    fn inverse_coordinator_gives_pure_contraction() {
        // A^-1 (A theta + b) = theta - theta_star
        let sys = LinearSystem::new(witness(), DVector::from_vec(vec![1.0, -2.0])).unwrap();
        let coord = Coordinator::inverse(&witness()).unwrap();
        let mixed = coordinated_field(&coord, &sys).unwrap();
        let theta = ParamVector::new(vec![0.3, 0.9]).unwrap();
        let star = sys.equilibrium();
        let out = mixed.eval(&theta);
        assert_relative_eq!(out[0], theta[0] - star[0], epsilon = 1e-12);
        assert_relative_eq!(out[1], theta[1] - star[1], epsilon = 1e-12);
    }

    #[test]
    fn gradient_flow_field_value() {
        let sys = LinearSystem::new(witness(), DVector::zeros(2)).unwrap();
        let coord = Coordinator::gradient_flow(&witness(), &ones(2)).unwrap();
        let mixed = coordinated_field(&coord, &sys).unwrap();
        let out = mixed.eval(&ParamVector::new(vec![1.0, 0.0]).unwrap());
        assert_relative_eq!(out[0], -5.0, epsilon = 1e-12);
        assert_relative_eq!(out[1], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn coordinated_kpi_examples() {
        let coord = Coordinator::custom(DMatrix::identity(2, 2)).unwrap();
        let f = DVector::from_vec(vec![0.2, 0.8]);
        assert_eq!(coordinated_kpi(&coord, &f).unwrap(), f);

        let coord =
            Coordinator::custom(DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 1.0])).unwrap();
        let c = coordinated_kpi(&coord, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(c[0], -1.0);
        assert_relative_eq!(c[1], -1.0);

        let coord =
            Coordinator::custom(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0])).unwrap();
        let c = coordinated_kpi(&coord, &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(c[0], 0.0);
    }

    #[test]
    fn distributed_direction_examples() {
        let map = |pairs: &[(usize, f64)]| pairs.iter().copied().collect::<BTreeMap<_, _>>();

        // single neighbor: -2 * 1 * (-1) * 2 = +4
        let d = distributed_update_direction(
            &map(&[(0, -1.0)]),
            &map(&[(0, 2.0)]),
            &map(&[(0, 1.0)]),
        )
        .unwrap();
        assert_relative_eq!(d, 4.0);

        // at equilibrium every residual is zero
        let d = distributed_update_direction(
            &map(&[(0, -1.0), (1, 2.0)]),
            &map(&[(0, 0.0), (1, 0.0)]),
            &map(&[(0, 1.0), (1, 1.0)]),
        )
        .unwrap();
        assert_relative_eq!(d, 0.0);

        // two neighbors: -2 * ((-1)*1 + 2*1) = -2
        let d = distributed_update_direction(
            &map(&[(0, -1.0), (1, 2.0)]),
            &map(&[(0, 1.0), (1, 1.0)]),
            &map(&[(0, 1.0), (1, 1.0)]),
        )
        .unwrap();
        assert_relative_eq!(d, -2.0);

        // key mismatch is an error
        assert!(distributed_update_direction(
            &map(&[(0, -1.0)]),
            &map(&[(1, 1.0)]),
            &map(&[(0, 1.0)]),
        )
        .is_err());
    }

    #[test]
    fn assembled_distributed_directions_match_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 4;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(n, |_, _| rng.random_range(0.2..2.0));
        let theta = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));

        let residual_vec = &a * &theta + &b; // f - target for the linear case
        let expected = -a.transpose() * DMatrix::from_diagonal(&(2.0 * &w)) * &residual_vec;

        for i in 0..n {
            let mut partials = BTreeMap::new();
            let mut residuals = BTreeMap::new();
            let mut weights = BTreeMap::new();
            for j in 0..n {
                partials.insert(j, a[(j, i)]);
                residuals.insert(j, residual_vec[j]);
                weights.insert(j, w[j]);
            }
            let d = distributed_update_direction(&partials, &residuals, &weights).unwrap();
            assert_relative_eq!(d, expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn sparse_neighbor_sets_lose_nothing() {
        // column 1 of A has a zero outside the neighbor set {0, 1}
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.0, 0.3, -1.0, 0.2, 0.0, 0.0, -1.0]);
        let theta = DVector::from_vec(vec![0.4, -0.8, 1.5]);
        let residual = &a * &theta;
        let i = 1;
        // full sum
        let full: f64 = (0..3).map(|j| -2.0 * a[(j, i)] * residual[j]).sum();
        // restricted to j with A[j,i] != 0, i.e. {0, 1}
        let mut partials = BTreeMap::new();
        let mut residuals = BTreeMap::new();
        let mut weights = BTreeMap::new();
        for j in [0usize, 1] {
            partials.insert(j, a[(j, i)]);
            residuals.insert(j, residual[j]);
            weights.insert(j, 1.0);
        }
        let restricted = distributed_update_direction(&partials, &residuals, &weights).unwrap();
        assert_relative_eq!(restricted, full, epsilon = 1e-15);
    }

    #[test]
    fn random_invertible_systems_are_stabilized() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0;
        while checked < 25 {
            let n = rng.random_range(2..=6);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            if crate::model::reciprocal_condition(&a) < 1e-10 {
                continue;
            }
            let w = DVector::from_fn(n, |_, _| rng.random_range(0.1..3.0));
            let coord = Coordinator::gradient_flow(&a, &w).unwrap();
            let verdict = verify_coordinated(&coord, &a).unwrap();
            assert!(
                verdict.stable,
                "gradient flow failed to stabilize: margin {}",
                verdict.margin
            );
            checked += 1;
        }
    }
}
