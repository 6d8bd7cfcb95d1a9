//! The two headline experiments: coordinated vs uncoordinated power control
//! on the hexagonal torus, and instability probability over Poisson
//! snapshots of increasing density.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::jacobian_fd;
use crate::model::{ParamVector, VectorField};
use crate::stability::eigen_stability;

use super::geometry::{hexagonal_layout, poisson_layout};
use super::scene::{find_equal_coverage, EqualizeOptions, InterferenceField, RadioParams, Scene};
use super::derive_seed;

/// Hexagonal-torus run configuration. Defaults reproduce the reference
/// setup: 12 stations, 500 m spacing, operating point 46 dBm, targets set to
/// the neighbor coverage measured there (about 80%), start perturbed by up to
/// 1 dB per station.
#[derive(Debug, Clone, PartialEq)]
pub struct HexagonalConfig {
    pub n_bs: usize,
    pub isd_km: f64,
    pub radio: RadioParams,
    pub coordinated: bool,
    pub t_end: f64,
    pub step: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub p_star_dbm: f64,
    pub perturb_db: f64,
    pub jacobian_delta_db: f64,
    pub p_lo_dbm: f64,
    pub p_hi_dbm: f64,
    /// Sup-norm radius (dB) around the operating point that counts as
    /// "staying close".
    pub ball_db: f64,
}

impl Default for HexagonalConfig {
    fn default() -> Self {
        Self {
            n_bs: 12,
            isd_km: 0.5,
            radio: RadioParams::default(),
            coordinated: false,
            t_end: 100.0,
            step: 0.01,
            seed: 1,
            n_samples: 2000,
            p_star_dbm: 46.0,
            perturb_db: 1.0,
            jacobian_delta_db: 0.5,
            p_lo_dbm: 0.0,
            p_hi_dbm: 60.0,
            ball_db: 3.0,
        }
    }
}

/// Trace of one hexagonal run.
#[derive(Debug, Clone, PartialEq)]
pub struct HexagonalRun {
    pub times: Vec<f64>,
    /// Per recorded instant, transmit powers in dBm.
    pub powers: Vec<Vec<f64>>,
    /// Per recorded instant, neighbor coverages `G_i`.
    pub coverages: Vec<Vec<f64>>,
    pub p_star: Vec<f64>,
    /// Neighbor-coverage targets, measured at the operating point.
    pub targets: Vec<f64>,
    pub coordinated: bool,
    /// Largest per-station deviation from the operating point over the run.
    pub max_deviation_db: f64,
    pub stayed_within_ball: bool,
}

/// Integrates the power-control dynamics, uncoordinated (`theta_dot = F`) or
/// coordinated (`theta_dot = -J^T F` with `J` the coverage Jacobian at the
/// operating point). RK4 with the state projected into the power box after
/// every step, so transmit powers stay physical even on unstable runs.
pub fn hexagonal_experiment(cfg: &HexagonalConfig) -> Result<HexagonalRun> {
    if !(cfg.step > 0.0) || cfg.t_end < cfg.step {
        return Err(Error::InvalidArgument(format!(
            "need 0 < step <= t_end, got step {} and t_end {}",
            cfg.step, cfg.t_end
        )));
    }
    let layout = hexagonal_layout(cfg.n_bs, cfg.isd_km)?;
    let scene = std::sync::Arc::new(Scene::new(
        layout,
        cfg.radio,
        derive_seed(cfg.seed, 100),
        cfg.n_samples,
    )?);
    let n = scene.n_bs();
    let p_star = vec![cfg.p_star_dbm; n];

    // Targets are the neighbor coverages measured at the operating point, so
    // the operating point is an exact equilibrium of the field.
    let targets = scene.g_vector(&p_star)?;
    for (i, g) in targets.iter().enumerate() {
        if !(*g > 0.0 && *g < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "station {i} has degenerate neighbor coverage {g} at the operating point"
            )));
        }
    }
    let field = InterferenceField::new(scene.clone(), targets.clone(), cfg.p_lo_dbm, cfg.p_hi_dbm)?;

    let mixing: Option<DMatrix<f64>> = if cfg.coordinated {
        let p_star_vec = ParamVector::new(p_star.clone())?;
        let jac = jacobian_fd(
            |p: &ParamVector| {
                DVector::from_vec(scene.g_vector(p.as_slice()).expect("scene has neighbors"))
            },
            &p_star_vec,
            &vec![cfg.jacobian_delta_db; n],
            1,
        )?;
        Some(-jac.transpose())
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 200));
    let mut state = DVector::from_fn(n, |i, _| {
        p_star[i] + rng.random_range(-cfg.perturb_db..=cfg.perturb_db)
    });

    let steps = (cfg.t_end / cfg.step).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut powers = Vec::with_capacity(steps + 1);
    let mut coverages = Vec::with_capacity(steps + 1);
    let mut max_deviation: f64 = 0.0;

    let raw = |v: &DVector<f64>| -> DVector<f64> {
        field
            .eval(&crate::model::param_vector_unchecked(v.clone()))
            .into_vector()
    };
    let drive = |f_raw: DVector<f64>| -> DVector<f64> {
        match &mixing {
            Some(c) => c * f_raw,
            None => f_raw,
        }
    };

    for k in 0..=steps {
        let t = k as f64 * cfg.step;
        let f_here = raw(&state);
        // record: G = F + targets at the trajectory point
        let g_here: Vec<f64> = f_here
            .iter()
            .zip(&targets)
            .map(|(f, g)| f + g)
            .collect();
        times.push(t);
        powers.push(state.iter().copied().collect::<Vec<f64>>());
        coverages.push(g_here);
        let deviation = state
            .iter()
            .zip(&p_star)
            .map(|(p, s)| (p - s).abs())
            .fold(0.0f64, f64::max);
        max_deviation = max_deviation.max(deviation);
        if k == steps {
            break;
        }

        let h = cfg.step;
        let k1 = drive(f_here);
        let k2 = drive(raw(&(&state + &k1 * (h / 2.0))));
        let k3 = drive(raw(&(&state + &k2 * (h / 2.0))));
        let k4 = drive(raw(&(&state + &k3 * h)));
        state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        for v in state.iter_mut() {
            *v = v.clamp(cfg.p_lo_dbm, cfg.p_hi_dbm);
        }
    }

    Ok(HexagonalRun {
        times,
        powers,
        coverages,
        p_star,
        targets,
        coordinated: cfg.coordinated,
        max_deviation_db: max_deviation,
        stayed_within_ball: max_deviation <= cfg.ball_db,
    })
}

/// Poisson snapshot study configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonConfig {
    pub density_per_km2: f64,
    pub area_km2: f64,
    pub n_snapshots: usize,
    pub seed: u64,
    pub radio: RadioParams,
    pub n_samples: usize,
    pub equalize: EqualizeOptions,
    pub jacobian_delta_db: f64,
    /// Worker threads; 1 = serial. Results are identical for any value.
    pub jobs: usize,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            density_per_km2: 3.0,
            area_km2: 4.0,
            n_snapshots: 100,
            seed: 1,
            radio: RadioParams::default(),
            n_samples: 2000,
            equalize: EqualizeOptions::default(),
            jacobian_delta_db: 0.5,
            jobs: 1,
        }
    }
}

/// One snapshot outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotRow {
    pub id: usize,
    pub n_bs: usize,
    pub converged: bool,
    /// Largest real part of the coverage Jacobian spectrum (NaN when the
    /// snapshot did not converge).
    pub max_re_eig: f64,
    pub unstable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotReport {
    pub rows: Vec<SnapshotRow>,
    pub n_converged: usize,
    pub n_unstable: usize,
    /// Unstable fraction among converged snapshots.
    pub p_unstable: f64,
}

fn run_snapshot(cfg: &PoissonConfig, id: usize) -> Result<SnapshotRow> {
    let snap_seed = derive_seed(cfg.seed, id as u64);
    let layout = poisson_layout(cfg.density_per_km2, cfg.area_km2, derive_seed(snap_seed, 0))?;
    let n_bs = layout.n_bs();
    let scene = Scene::new(layout, cfg.radio, derive_seed(snap_seed, 1), cfg.n_samples)?;

    let powers = match find_equal_coverage(&scene, &cfg.equalize) {
        Ok(p) => p,
        Err(Error::NonConvergence { .. }) => {
            return Ok(SnapshotRow {
                id,
                n_bs,
                converged: false,
                max_re_eig: f64::NAN,
                unstable: false,
            });
        }
        Err(e) => return Err(e),
    };

    let p_vec = ParamVector::new(powers)?;
    let jac = jacobian_fd(
        |p: &ParamVector| DVector::from_vec(scene.g_vector(p.as_slice()).expect("neighbors")),
        &p_vec,
        &vec![cfg.jacobian_delta_db; n_bs],
        1,
    )?;
    let verdict = eigen_stability(&jac)?;
    Ok(SnapshotRow {
        id,
        n_bs,
        converged: true,
        max_re_eig: verdict.margin,
        unstable: verdict.margin > 0.0,
    })
}

/// Estimates the probability that a random network is unstable at its
/// equal-coverage operating point. Snapshots own independent seed streams,
/// so the report is identical for any number of worker threads.
pub fn snapshot_instability(cfg: &PoissonConfig) -> Result<SnapshotReport> {
    if cfg.n_snapshots == 0 {
        return Err(Error::InvalidArgument("need at least one snapshot".into()));
    }
    let ids: Vec<usize> = (0..cfg.n_snapshots).collect();
    let rows: Result<Vec<SnapshotRow>> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| ids.par_iter().map(|&id| run_snapshot(cfg, id)).collect())
    } else {
        ids.iter().map(|&id| run_snapshot(cfg, id)).collect()
    };
    let mut rows = rows?;
    rows.sort_by_key(|r| r.id);

    let n_converged = rows.iter().filter(|r| r.converged).count();
    if n_converged == 0 {
        return Err(Error::NonConvergence {
            what: "every snapshot failed to equalize coverage".into(),
            iters: cfg.n_snapshots,
        });
    }
    let n_unstable = rows.iter().filter(|r| r.unstable).count();
    Ok(SnapshotReport {
        p_unstable: n_unstable as f64 / n_converged as f64,
        rows,
        n_converged,
        n_unstable,
    })
}
