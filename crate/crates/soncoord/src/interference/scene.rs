//! Radio model and the frozen Monte Carlo scene.
//!
//! A `Scene` freezes everything random about one experiment: the sample
//! points of every cell and the per-(station, point) shadowing draws. Power
//! vectors are then mapped to coverage probabilities deterministically, with
//! common random numbers across evaluations, which is what makes
//! finite-difference Jacobians of the coverage field meaningful.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{param_vector_unchecked, ParamVector, VectorField};

use super::geometry::NetworkLayout;
use super::{db_to_linear, dbm_to_mw, derive_seed};

/// Propagation and service constants. Defaults are the reference values used
/// by the numerical studies: 128 + 36.4 log10(d km) dB path loss, 6 dB
/// lognormal shadowing, -174 dBm/Hz noise, 20 MHz bandwidth and a 20 Mbit/s
/// rate target (0 dB SINR threshold).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioParams {
    pub pl_const_db: f64,
    pub pl_slope_db_per_decade: f64,
    pub shadow_sigma_db: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub rate_min_bps: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            pl_const_db: 128.0,
            pl_slope_db_per_decade: 36.4,
            shadow_sigma_db: 6.0,
            noise_psd_dbm_hz: -174.0,
            bandwidth_hz: 2e7,
            rate_min_bps: 2e7,
        }
    }
}

impl RadioParams {
    /// Signal attenuation in dB at distance `d_km` plus a shadowing term.
    pub fn attenuation_db(&self, d_km: f64, shadow_db: f64) -> f64 {
        assert!(d_km > 0.0, "attenuation undefined at zero distance");
        self.pl_const_db + self.pl_slope_db_per_decade * d_km.log10() + shadow_db
    }

    /// Total thermal noise power in dBm over the system bandwidth.
    pub fn noise_dbm(&self) -> f64 {
        self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10()
    }

    /// SINR (linear) above which the Shannon rate meets `rate_min_bps`.
    pub fn sinr_threshold_linear(&self) -> f64 {
        2f64.powf(self.rate_min_bps / self.bandwidth_hz) - 1.0
    }
}

/// Frozen lognormal shadowing: a deterministic function of (station, point
/// key), so regenerating from the same seed reproduces identical values and
/// every field evaluation within an experiment sees the same propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowField {
    seed: u64,
    sigma_db: f64,
}

impl ShadowField {
    pub fn new(seed: u64, sigma_db: f64) -> Self {
        Self { seed, sigma_db }
    }

    pub fn value(&self, bs: usize, point_key: u64) -> f64 {
        let stream = derive_seed(self.seed, derive_seed(bs as u64, point_key));
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        self.sigma_db * normal.sample(&mut rng)
    }
}

/// SINR (linear) at a location served by station `serving`, with per-station
/// shadowing supplied by the caller.
pub fn sinr(
    point: (f64, f64),
    serving: usize,
    powers_dbm: &[f64],
    layout: &NetworkLayout,
    radio: &RadioParams,
    shadow_db: impl Fn(usize) -> f64,
) -> f64 {
    let noise_mw = dbm_to_mw(radio.noise_dbm());
    let mut signal = 0.0;
    let mut interference = 0.0;
    for j in 0..layout.n_bs() {
        let d = layout.distance_to_bs(point, j);
        let gain = db_to_linear(-radio.attenuation_db(d, shadow_db(j)));
        let rx = gain * dbm_to_mw(powers_dbm[j]);
        if j == serving {
            signal = rx;
        } else {
            interference += rx;
        }
    }
    signal / (noise_mw + interference)
}

/// Shannon rate `w log2(1 + S)` in bit/s.
pub fn shannon_rate(sinr_linear: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * (1.0 + sinr_linear).log2()
}

/// One frozen sample location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
    /// Stable identity for shadowing lookups.
    pub key: u64,
    pub cell: usize,
}

/// Frozen Monte Carlo scene: layout + radio + sample points + linear gains.
///
/// `n_samples` is the mean number of points per cell: the scene draws
/// `n_samples * n_bs` points uniformly over the area and assigns each to its
/// nearest station, so cells collect points (and Monte Carlo weight) in
/// proportion to their area. Cell areas are estimated from the same counts.
pub struct Scene {
    layout: NetworkLayout,
    radio: RadioParams,
    shadow: ShadowField,
    points: Vec<SamplePoint>,
    cell_points: Vec<Vec<usize>>,
    /// Row-major `points.len() x n_bs` linear gains (path loss + shadowing).
    gains: Vec<f64>,
    areas: Vec<f64>,
    noise_mw: f64,
    sinr_threshold: f64,
}

impl Scene {
    pub fn new(layout: NetworkLayout, radio: RadioParams, seed: u64, n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
        }
        let n_bs = layout.n_bs();
        let total = n_samples
            .checked_mul(n_bs)
            .ok_or_else(|| Error::InvalidArgument("n_samples overflow".into()))?;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
        let shadow = ShadowField::new(derive_seed(seed, 1), radio.shadow_sigma_db);

        let mut points = Vec::with_capacity(total);
        let mut cell_points = vec![Vec::new(); n_bs];
        for key in 0..total {
            let p = (
                rng.random_range(0.0..layout.width()),
                rng.random_range(0.0..layout.height()),
            );
            let cell = layout.cell_of(p);
            cell_points[cell].push(points.len());
            points.push(SamplePoint {
                x: p.0,
                y: p.1,
                key: key as u64,
                cell,
            });
        }

        let mut gains = Vec::with_capacity(total * n_bs);
        for pt in &points {
            for j in 0..n_bs {
                let d = layout.distance_to_bs((pt.x, pt.y), j);
                let att = radio.attenuation_db(d, shadow.value(j, pt.key));
                gains.push(db_to_linear(-att));
            }
        }

        let areas = cell_points
            .iter()
            .map(|pts| layout.area() * pts.len() as f64 / total as f64)
            .collect();

        Ok(Self {
            noise_mw: dbm_to_mw(radio.noise_dbm()),
            sinr_threshold: radio.sinr_threshold_linear(),
            layout,
            radio,
            shadow,
            points,
            cell_points,
            gains,
            areas,
        })
    }

    pub fn layout(&self) -> &NetworkLayout {
        &self.layout
    }

    pub fn radio(&self) -> &RadioParams {
        &self.radio
    }

    pub fn shadow(&self) -> &ShadowField {
        &self.shadow
    }

    pub fn n_bs(&self) -> usize {
        self.layout.n_bs()
    }

    pub fn points(&self) -> &[SamplePoint] {
        &self.points
    }

    pub fn cell_sample_indices(&self, i: usize) -> &[usize] {
        &self.cell_points[i]
    }

    /// Estimated cell area in km².
    pub fn area(&self, i: usize) -> f64 {
        self.areas[i]
    }

    /// Cells that received no sample points (tiny Poisson cells).
    pub fn empty_cells(&self) -> Vec<usize> {
        (0..self.n_bs())
            .filter(|&i| self.cell_points[i].is_empty())
            .collect()
    }

    fn covered(&self, point_idx: usize, powers_mw: &[f64]) -> bool {
        let n_bs = self.n_bs();
        let row = &self.gains[point_idx * n_bs..(point_idx + 1) * n_bs];
        let serving = self.points[point_idx].cell;
        let mut total = 0.0;
        for j in 0..n_bs {
            total += row[j] * powers_mw[j];
        }
        let signal = row[serving] * powers_mw[serving];
        let s = signal / (self.noise_mw + total - signal);
        s >= self.sinr_threshold
    }

    /// Monte Carlo coverage probability of cell `i`: the fraction of its
    /// frozen sample points whose single-user rate meets the target. Empty
    /// cells report full coverage (flagged via `empty_cells`).
    pub fn coverage(&self, i: usize, powers_dbm: &[f64]) -> f64 {
        assert_eq!(powers_dbm.len(), self.n_bs());
        let pts = &self.cell_points[i];
        if pts.is_empty() {
            return 1.0;
        }
        let powers_mw: Vec<f64> = powers_dbm.iter().map(|&p| dbm_to_mw(p)).collect();
        let covered = pts
            .iter()
            .filter(|&&idx| self.covered(idx, &powers_mw))
            .count();
        covered as f64 / pts.len() as f64
    }

    /// All coverage probabilities in one pass over the point pool.
    pub fn all_coverages(&self, powers_dbm: &[f64]) -> Vec<f64> {
        assert_eq!(powers_dbm.len(), self.n_bs());
        let n_bs = self.n_bs();
        let powers_mw: Vec<f64> = powers_dbm.iter().map(|&p| dbm_to_mw(p)).collect();
        let mut covered = vec![0usize; n_bs];
        for idx in 0..self.points.len() {
            if self.covered(idx, &powers_mw) {
                covered[self.points[idx].cell] += 1;
            }
        }
        (0..n_bs)
            .map(|i| {
                let n = self.cell_points[i].len();
                if n == 0 {
                    1.0
                } else {
                    covered[i] as f64 / n as f64
                }
            })
            .collect()
    }

    /// Area-weighted coverage of the neighbors of station `i`, given the
    /// per-cell coverages.
    pub fn neighbor_coverage_from(&self, i: usize, coverages: &[f64]) -> Result<f64> {
        let neighbors = self.layout.neighbors(i);
        if neighbors.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "station {i} has no neighbors"
            )));
        }
        let mut weighted = 0.0;
        let mut weight = 0.0;
        for &j in neighbors {
            weighted += self.areas[j] * coverages[j];
            weight += self.areas[j];
        }
        if weight == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "all neighbor cells of station {i} are empty"
            )));
        }
        Ok(weighted / weight)
    }

    pub fn neighbor_coverage(&self, i: usize, powers_dbm: &[f64]) -> Result<f64> {
        self.neighbor_coverage_from(i, &self.all_coverages(powers_dbm))
    }

    /// The indicator vector `G`: neighbor coverage of every station.
    pub fn g_vector(&self, powers_dbm: &[f64]) -> Result<Vec<f64>> {
        let coverages = self.all_coverages(powers_dbm);
        (0..self.n_bs())
            .map(|i| self.neighbor_coverage_from(i, &coverages))
            .collect()
    }

    /// Coverage of `serving` over caller-supplied points and shadowing,
    /// sharing the scene's radio constants and SINR threshold. Used by the
    /// lattice-symmetry checks that remap common random numbers.
    pub fn coverage_with(
        &self,
        serving: usize,
        points: &[(f64, f64)],
        powers_dbm: &[f64],
        shadow_db: impl Fn(usize, usize) -> f64,
    ) -> f64 {
        assert!(!points.is_empty());
        let covered = points
            .iter()
            .enumerate()
            .filter(|(k, &p)| {
                let s = sinr(p, serving, powers_dbm, &self.layout, &self.radio, |j| {
                    shadow_db(j, *k)
                });
                s >= self.sinr_threshold
            })
            .count();
        covered as f64 / points.len() as f64
    }
}

/// The power-control field `F_i(P) = G_i(P) - target_i` over powers in dBm.
/// Inputs are clamped into `[p_lo, p_hi]` and clamp events counted.
pub struct InterferenceField {
    scene: Arc<Scene>,
    targets: Vec<f64>,
    p_lo: f64,
    p_hi: f64,
    clamp_events: AtomicU64,
}

impl InterferenceField {
    pub fn new(scene: Arc<Scene>, targets: Vec<f64>, p_lo: f64, p_hi: f64) -> Result<Self> {
        if targets.len() != scene.n_bs() {
            return Err(Error::Dimension(format!(
                "{} targets for {} stations",
                targets.len(),
                scene.n_bs()
            )));
        }
        if let Some(i) = targets.iter().position(|&g| !(g > 0.0 && g < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "coverage target {i} must lie in (0,1), got {}",
                targets[i]
            )));
        }
        if !(p_lo < p_hi) {
            return Err(Error::InvalidArgument(format!(
                "power clamp [{p_lo}, {p_hi}] is empty"
            )));
        }
        Ok(Self {
            scene,
            targets,
            p_lo,
            p_hi,
            clamp_events: AtomicU64::new(0),
        })
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    pub fn clamp(&self, powers: &[f64]) -> Vec<f64> {
        let clamped: Vec<f64> = powers
            .iter()
            .map(|&p| p.clamp(self.p_lo, self.p_hi))
            .collect();
        if clamped
            .iter()
            .zip(powers)
            .any(|(c, p)| c != p)
        {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
        }
        clamped
    }
}

impl VectorField for InterferenceField {
    fn dim(&self) -> usize {
        self.scene.n_bs()
    }

    fn eval(&self, theta: &ParamVector) -> ParamVector {
        assert_eq!(theta.dim(), self.dim(), "field evaluated at wrong dimension");
        let powers = self.clamp(theta.as_slice());
        let g = self.scene.g_vector(&powers).expect("scene has neighbors");
        param_vector_unchecked(DVector::from_fn(self.dim(), |i, _| g[i] - self.targets[i]))
    }
}

/// Damped fixed-point search for the power vector equalizing all coverages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualizeOptions {
    /// Fixed coverage level to hit, or None to equalize to the running mean.
    ///
    /// Dense networks are interference-limited: scaling every power together
    /// barely moves coverage, so an arbitrary fixed level is usually
    /// unreachable. The adaptive mode finds the common level the geometry
    /// actually supports.
    pub target: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// dB of power moved per unit of coverage error.
    pub gain_db: f64,
    pub p_init_dbm: f64,
    pub p_lo: f64,
    pub p_hi: f64,
}

impl Default for EqualizeOptions {
    fn default() -> Self {
        Self {
            target: None,
            tol: 0.02,
            max_iter: 200,
            gain_db: 20.0,
            p_init_dbm: 46.0,
            p_lo: 0.0,
            p_hi: 60.0,
        }
    }
}

/// Iterates `P_i += gain * (K_ref - K_i(P))` (clamped) until every cell's
/// coverage is within `tol` of the reference level, which is either the
/// fixed target or the mean coverage of the current iterate.
///
/// The gain decays hyperbolically with the iteration count: Monte Carlo
/// coverage is piecewise constant in power, and a fixed gain can lock into a
/// limit cycle hopping over the tolerance band.
pub fn find_equal_coverage(scene: &Scene, opts: &EqualizeOptions) -> Result<Vec<f64>> {
    if let Some(t) = opts.target {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "coverage target must lie in (0,1), got {t}"
            )));
        }
    }
    let mut powers = vec![opts.p_init_dbm; scene.n_bs()];
    for it in 0..opts.max_iter {
        let coverages = scene.all_coverages(&powers);
        let reference = opts
            .target
            .unwrap_or_else(|| coverages.iter().sum::<f64>() / coverages.len() as f64);
        let worst = coverages
            .iter()
            .map(|k| (k - reference).abs())
            .fold(0.0f64, f64::max);
        if worst < opts.tol {
            return Ok(powers);
        }
        let gain = opts.gain_db / (1.0 + it as f64 / 40.0);
        for (p, k) in powers.iter_mut().zip(&coverages) {
            *p = (*p + gain * (reference - k)).clamp(opts.p_lo, opts.p_hi);
        }
    }
    Err(Error::NonConvergence {
        what: match opts.target {
            Some(t) => format!("coverage equalization to {t} within {}", opts.tol),
            None => format!("coverage equalization to a common level within {}", opts.tol),
        },
        iters: opts.max_iter,
    })
}
