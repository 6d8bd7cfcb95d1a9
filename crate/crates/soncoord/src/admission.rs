//! Processor-sharing queue with logistic admission control, driven by two
//! loops: resource allocation tracks a target outage and admission control
//! tracks a target file-transfer time.
//!
//! Users arrive Poisson at rate `lambda` to download exponential files of
//! mean `mean_size` Mbits; with `n` active users each gets throughput
//! `x R / n`. New arrivals are admitted with probability `phi(n - b)`. The
//! active-user count is a reversible birth-death chain, so the stationary
//! distribution has the closed product form used throughout; no event-driven
//! simulation is needed.
//!
//! Symbol note: the blocking threshold `b` of the queue is unrelated to the
//! offset vector `b` of a linear system; the two never meet in one signature.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::jacobian_fd;
use crate::model::{param_vector_unchecked, ParamVector, VectorField};
use crate::stability::{eigen_stability, instability_det_2x2};

/// Queueing parameters; units are users/s, Mbits, Mbits/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueParams {
    pub lambda: f64,
    pub mean_size: f64,
    pub rate: f64,
    pub rate_min: f64,
    pub x_max: f64,
}

impl QueueParams {
    pub fn new(lambda: f64, mean_size: f64, rate: f64, rate_min: f64, x_max: f64) -> Result<Self> {
        for (name, v) in [
            ("lambda", lambda),
            ("mean_size", mean_size),
            ("rate", rate),
            ("rate_min", rate_min),
            ("x_max", x_max),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if rate_min > rate {
            return Err(Error::InvalidArgument(format!(
                "rate_min = {rate_min} exceeds rate = {rate}"
            )));
        }
        Ok(Self {
            lambda,
            mean_size,
            rate,
            rate_min,
            x_max,
        })
    }

    /// The values used for the numerical study.
    pub fn reference() -> Self {
        Self::new(0.5, 10.0, 15.0, 2.0, 1.0).expect("reference parameters are valid")
    }
}

/// Resource fraction and blocking threshold under control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub x: f64,
    pub b: f64,
}

impl OperatingPoint {
    pub fn new(x: f64, b: f64, params: &QueueParams) -> Result<Self> {
        if !(x > 0.0) || x > params.x_max {
            return Err(Error::InvalidArgument(format!(
                "x must lie in (0, {}], got {x}",
                params.x_max
            )));
        }
        if b < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "blocking threshold must be >= 0, got {b}"
            )));
        }
        Ok(Self { x, b })
    }
}

/// Admission probability `phi(n) = 1 / (1 + e^n)`: smooth, strictly
/// decreasing, vanishing as n grows. Overflow-safe for any argument.
pub fn logistic_phi(n: f64) -> f64 {
    if n > 0.0 {
        let e = (-n).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + n.exp())
    }
}

/// Offered load `rho = lambda * E[sigma] / (x R)`.
pub fn load(params: &QueueParams, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "resource fraction must be > 0, got {x}"
        )));
    }
    Ok(params.lambda * params.mean_size / (x * params.rate))
}

/// Stationary distribution of the active-user count, truncated where the
/// product-form terms become negligible.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    probs: Vec<f64>,
    /// Upper bound on the probability mass beyond the truncation point.
    pub tail_mass_bound: f64,
}

impl StationaryDist {
    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn truncation(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }
}

const TAIL_REL_TOL: f64 = 1e-14;
const N_MAX_CAP: usize = 1_000_000;

/// Stationary distribution `pi(n) ~ rho^n prod_{k<n} phi(k - b)`, normalized
/// over `0..=n_max`, with `n_max` extended automatically (doubling) until the
/// next unnormalized term falls below `1e-14` of the running total.
///
/// The admission product decays super-geometrically once `k - b` is large, so
/// extension always terminates; a hard cap guards the impossible case.
/// The formula extends to any finite `b` (operating points keep `b >= 0`;
/// boundary differentiation probes just below it).
pub fn stationary(params: &QueueParams, x: f64, b: f64, n_max: usize) -> Result<StationaryDist> {
    if n_max < 10 {
        return Err(Error::InvalidArgument(format!(
            "initial truncation must be >= 10, got {n_max}"
        )));
    }
    if !b.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "blocking threshold must be finite, got {b}"
        )));
    }
    let rho = load(params, x)?;

    let mut terms: Vec<f64> = Vec::with_capacity(n_max + 1);
    let mut term = 1.0f64;
    terms.push(term);
    let mut total = term;
    let mut limit = n_max;
    let mut n = 0usize;
    loop {
        // birth ratio: pi(n+1)/pi(n) = rho * phi(n - b)
        term *= rho * logistic_phi(n as f64 - b);
        n += 1;
        terms.push(term);
        total += term;
        if !total.is_finite() {
            return Err(Error::Overflow(format!(
                "stationary normalization at x = {x}, b = {b}"
            )));
        }
        if n >= limit {
            if term < TAIL_REL_TOL * total {
                break;
            }
            limit *= 2;
            if limit > N_MAX_CAP {
                return Err(Error::NonConvergence {
                    what: format!("stationary truncation at x = {x}, b = {b}"),
                    iters: N_MAX_CAP,
                });
            }
        }
    }

    // Bound the discarded mass by a geometric tail with the last birth ratio.
    let last_ratio = rho * logistic_phi(n as f64 - b);
    let tail_mass_bound = if last_ratio < 1.0 {
        term * last_ratio / (1.0 - last_ratio) / total
    } else {
        f64::INFINITY
    };

    let probs = terms.iter().map(|t| t / total).collect();
    Ok(StationaryDist {
        probs,
        tail_mass_bound,
    })
}

/// Mean file-transfer time `T = E[n] / lambda` (Little's law).
pub fn mean_transfer_time(params: &QueueParams, x: f64, b: f64) -> Result<f64> {
    let dist = stationary(params, x, b, 100)?;
    Ok(dist.mean() / params.lambda)
}

/// Per-user throughput falls below `rate_min` exactly when
/// `n > x R / rate_min`; outage is the stationary mass of those states.
pub fn outage(params: &QueueParams, x: f64, b: f64) -> Result<f64> {
    let dist = stationary(params, x, b, 100)?;
    let threshold = x * params.rate / params.rate_min;
    Ok(dist
        .probs()
        .iter()
        .enumerate()
        .filter(|(n, _)| *n as f64 > threshold)
        .map(|(_, p)| p)
        .sum())
}

/// Smoothed outage: the sharp indicator is replaced by the logistic
/// `psi(u) = 1 / (1 + e^(-u/s))`, making the indicator differentiable in `x`.
pub fn smoothed_outage(params: &QueueParams, x: f64, b: f64, sharpness: f64) -> Result<f64> {
    if !(sharpness > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sharpness must be > 0, got {sharpness}"
        )));
    }
    let dist = stationary(params, x, b, 100)?;
    let threshold = x * params.rate / params.rate_min;
    Ok(dist
        .probs()
        .iter()
        .enumerate()
        .map(|(n, p)| p * logistic_phi(-(n as f64 - threshold) / sharpness))
        .sum())
}

/// Targets for the two loops: outage level and transfer time (seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissionTargets {
    pub outage: f64,
    pub transfer_time: f64,
}

/// Evaluation domain clamp for the two-loop field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissionClamp {
    pub x_min: f64,
    pub b_max: f64,
}

impl Default for AdmissionClamp {
    fn default() -> Self {
        Self {
            x_min: 1e-3,
            b_max: 50.0,
        }
    }
}

/// The two-loop field over `theta = (x, b)`:
/// `F_1 = smoothed_outage - target`, `F_2 = target_T - T` (the transfer-time
/// loop monitors `-T`). Evaluations outside the domain are clamped and
/// counted.
pub struct AdmissionField {
    params: QueueParams,
    targets: AdmissionTargets,
    sharpness: f64,
    clamp: AdmissionClamp,
    clamp_events: AtomicU64,
}

impl AdmissionField {
    pub fn new(
        params: QueueParams,
        targets: AdmissionTargets,
        sharpness: f64,
        clamp: AdmissionClamp,
    ) -> Result<Self> {
        if !(sharpness > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sharpness must be > 0, got {sharpness}"
            )));
        }
        if !(targets.outage > 0.0 && targets.outage < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "outage target must lie in (0,1), got {}",
                targets.outage
            )));
        }
        if !(targets.transfer_time > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "transfer-time target must be > 0, got {}",
                targets.transfer_time
            )));
        }
        Ok(Self {
            params,
            targets,
            sharpness,
            clamp,
            clamp_events: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &QueueParams {
        &self.params
    }

    /// Number of evaluations that had to be clamped into the domain.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    fn clamp_point(&self, x: f64, b: f64) -> (f64, f64) {
        let cx = x.clamp(self.clamp.x_min, self.params.x_max);
        let cb = b.clamp(0.0, self.clamp.b_max);
        if cx != x || cb != b {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
        }
        (cx, cb)
    }
}

impl VectorField for AdmissionField {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), 2, "admission field is two-dimensional");
        let (x, b) = self.clamp_point(theta[0], theta[1]);
        let o = smoothed_outage(&self.params, x, b, self.sharpness)
            .expect("domain clamped to valid range");
        let t = mean_transfer_time(&self.params, x, b).expect("domain clamped to valid range");
        param_vector_unchecked(DVector::from_vec(vec![
            o - self.targets.outage,
            self.targets.transfer_time - t,
        ]))
    }
}

/// One classified operating point of the stability-region scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionRow {
    pub x: f64,
    pub b: f64,
    pub det: f64,
    pub trace: f64,
    pub max_re_eig: f64,
    pub stable: bool,
}

/// Finite-difference steps used by the region scan; validated by
/// step-halving agreement on the reference parameters.
pub const SCAN_DELTA_X: f64 = 1e-4;
pub const SCAN_DELTA_B: f64 = 1e-3;

/// Jacobian of the two-loop field at one operating point.
///
/// Differentiates the raw indicator maps: targets shift the field by a
/// constant and do not enter the Jacobian. Probe points may exceed `x_max`
/// by the (tiny) finite-difference step; the formulas extend smoothly.
pub fn field_jacobian(params: &QueueParams, x: f64, b: f64, sharpness: f64) -> Result<DMatrix<f64>> {
    let oracle = |theta: &ParamVector| {
        let o = smoothed_outage(params, theta[0], theta[1], sharpness)
            .expect("scan domain is interior");
        let t = mean_transfer_time(params, theta[0], theta[1]).expect("scan domain is interior");
        DVector::from_vec(vec![o, -t])
    };
    let theta = ParamVector::new(vec![x, b])?;
    jacobian_fd(oracle, &theta, &[SCAN_DELTA_X, SCAN_DELTA_B], 1)
}

fn classify_point(params: &QueueParams, x: f64, b: f64, sharpness: f64) -> Result<RegionRow> {
    let j = field_jacobian(params, x, b, sharpness)?;
    let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
    let trace = j[(0, 0)] + j[(1, 1)];
    let verdict = eigen_stability(&j)?;
    debug_assert_eq!(instability_det_2x2(&j).unwrap(), det < 0.0);
    Ok(RegionRow {
        x,
        b,
        det,
        trace,
        max_re_eig: verdict.margin,
        stable: verdict.stable,
    })
}

/// Classifies every grid point by the 2x2 determinant test and the full
/// eigenvalue test.
pub fn stability_region_scan(
    params: &QueueParams,
    x_grid: &[f64],
    b_grid: &[f64],
    sharpness: f64,
) -> Result<Vec<RegionRow>> {
    if x_grid.is_empty() || b_grid.is_empty() {
        return Err(Error::InvalidArgument("scan grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(x_grid.len() * b_grid.len());
    for &x in x_grid {
        for &b in b_grid {
            rows.push(classify_point(params, x, b, sharpness)?);
        }
    }
    Ok(rows)
}

/// Same scan fanned out over worker threads. Grid points are independent
/// pure evaluations, and rows come back in grid order for any thread count.
pub fn stability_region_scan_parallel(
    params: &QueueParams,
    x_grid: &[f64],
    b_grid: &[f64],
    sharpness: f64,
    jobs: usize,
) -> Result<Vec<RegionRow>> {
    if jobs <= 1 {
        return stability_region_scan(params, x_grid, b_grid, sharpness);
    }
    if x_grid.is_empty() || b_grid.is_empty() {
        return Err(Error::InvalidArgument("scan grid is empty".into()));
    }
    use rayon::prelude::*;
    let points: Vec<(f64, f64)> = x_grid
        .iter()
        .flat_map(|&x| b_grid.iter().map(move |&b| (x, b)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        points
            .par_iter()
            .map(|&(x, b)| classify_point(params, x, b, sharpness))
            .collect()
    })
}
