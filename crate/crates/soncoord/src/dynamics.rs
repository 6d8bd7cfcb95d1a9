//! Trajectory generation: deterministic RK4 integration and the noisy
//! discrete-time stochastic-approximation loop.
//!
//! The discrete update `theta[t+1] = theta[t] + eps (F(theta[t]) + M[t])`
//! tracks the continuous dynamics for small step size; schedules cover
//! simultaneous updates, round-robin sweeps and uniformly random coordinate
//! picks (equal average update frequency per loop). Runs are reproducible:
//! the same seed yields bit-identical trajectories.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::model::{param_vector_unchecked, ParamVector, VectorField};

/// Runs abort (flagged, not crashed) once the state norm passes this bound.
pub const ESCAPE_NORM: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub scheme: String,
    pub step: f64,
    pub seed: Option<u64>,
}

/// Time-stamped sequence of parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ParamVector>,
    pub meta: TrajectoryMeta,
    /// True when the escape guard tripped; times/states end at the abort point.
    pub escaped: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &ParamVector {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.dim())
    }
}

/// Classical fixed-step RK4 for `theta_dot = F(theta)`.
///
/// The final step is shortened when `t_end` is not a multiple of `h` so the
/// trajectory lands exactly on `t_end`.
pub fn integrate_ode(
    field: &dyn VectorField,
    theta0: &ParamVector,
    h: f64,
    t_end: f64,
) -> Result<Trajectory> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    if t_end < h {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} must be at least one step h = {h}"
        )));
    }
    if theta0.dim() != field.dim() {
        return Err(Error::Dimension(format!(
            "theta0 has dimension {}, field has {}",
            theta0.dim(),
            field.dim()
        )));
    }

    let mut times = vec![0.0];
    let mut states = vec![theta0.clone()];
    let mut state = theta0.as_vector().clone();
    let mut t = 0.0;
    let mut escaped = false;

    let eval = |v: &DVector<f64>| -> DVector<f64> {
        field
            .eval(&param_vector_unchecked(v.clone()))
            .into_vector()
    };

    while t < t_end - 1e-12 * t_end.max(1.0) {
        let step = h.min(t_end - t);
        let k1 = eval(&state);
        let k2 = eval(&(&state + &k1 * (step / 2.0)));
        let k3 = eval(&(&state + &k2 * (step / 2.0)));
        let k4 = eval(&(&state + &k3 * step));
        state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
        t += step;
        times.push(t);
        states.push(param_vector_unchecked(state.clone()));
        if state.norm() > ESCAPE_NORM {
            escaped = true;
            break;
        }
    }

    Ok(Trajectory {
        times,
        states,
        meta: TrajectoryMeta {
            scheme: "rk4".into(),
            step: h,
            seed: None,
        },
        escaped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Every coordinate moves at each step.
    Synchronous,
    /// Coordinate `t mod I` moves at step `t`.
    RoundRobin,
    /// A uniformly random coordinate moves; every loop is updated with the
    /// same average frequency.
    RandomCoordinate,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Synchronous => "synchronous",
            ScheduleKind::RoundRobin => "round_robin",
            ScheduleKind::RandomCoordinate => "random_coordinate",
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synchronous" => Ok(ScheduleKind::Synchronous),
            "round_robin" => Ok(ScheduleKind::RoundRobin),
            "random_coordinate" => Ok(ScheduleKind::RandomCoordinate),
            other => Err(Error::InvalidArgument(format!(
                "unknown schedule '{other}' (expected synchronous, round_robin or random_coordinate)"
            ))),
        }
    }
}

/// Configuration of one stochastic-approximation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SaSchedule {
    pub kind: ScheduleKind,
    pub epsilon: f64,
    pub noise_sigma: f64,
    pub steps: usize,
    pub seed: u64,
}

impl SaSchedule {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Noisy discrete loop `theta[t+1] = theta[t] + eps (F(theta[t]) + M[t])`.
///
/// `M[t]` is i.i.d. zero-mean Gaussian with per-component std `noise_sigma`,
/// drawn from a ChaCha stream seeded by `sched.seed`. A full noise vector is
/// drawn every step regardless of schedule, so schedules differ only in which
/// coordinates move, not in the random numbers they consume.
pub fn simulate_sa(
    field: &dyn VectorField,
    theta0: &ParamVector,
    sched: &SaSchedule,
) -> Result<Trajectory> {
    sched.validate()?;
    if theta0.dim() != field.dim() {
        return Err(Error::Dimension(format!(
            "theta0 has dimension {}, field has {}",
            theta0.dim(),
            field.dim()
        )));
    }
    let dim = field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut times = Vec::with_capacity(sched.steps + 1);
    let mut states = Vec::with_capacity(sched.steps + 1);
    times.push(0.0);
    states.push(theta0.clone());
    let mut state = theta0.as_vector().clone();
    let mut escaped = false;

    for step in 0..sched.steps {
        let drive = field.eval(&param_vector_unchecked(state.clone()));
        let noise: Vec<f64> = (0..dim)
            .map(|_| sched.noise_sigma * normal.sample(&mut rng))
            .collect();
        match sched.kind {
            ScheduleKind::Synchronous => {
                for i in 0..dim {
                    state[i] += sched.epsilon * (drive[i] + noise[i]);
                }
            }
            ScheduleKind::RoundRobin => {
                let i = step % dim;
                state[i] += sched.epsilon * (drive[i] + noise[i]);
            }
            ScheduleKind::RandomCoordinate => {
                let i = rng.random_range(0..dim);
                state[i] += sched.epsilon * (drive[i] + noise[i]);
            }
        }
        times.push((step + 1) as f64);
        states.push(param_vector_unchecked(state.clone()));
        if state.norm() > ESCAPE_NORM {
            escaped = true;
            break;
        }
    }

    Ok(Trajectory {
        times,
        states,
        meta: TrajectoryMeta {
            scheme: format!("sa_{}", sched.kind.name()),
            step: sched.epsilon,
            seed: Some(sched.seed),
        },
        escaped,
    })
}

/// Distance summary of a run relative to a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStats {
    pub final_dist: f64,
    /// Mean distance over the last 10% of samples.
    pub mean_tail_dist: f64,
    pub escaped: bool,
}

pub fn convergence_stats(traj: &Trajectory, theta_star: &ParamVector) -> Result<ConvergenceStats> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("trajectory is empty".into()));
    }
    if traj.dim() != theta_star.dim() {
        return Err(Error::Dimension(format!(
            "trajectory has dimension {}, reference has {}",
            traj.dim(),
            theta_star.dim()
        )));
    }
    let n = traj.states.len();
    let tail_start = n - (n / 10).max(1);
    let tail = &traj.states[tail_start..];
    let mean_tail_dist = tail.iter().map(|s| s.distance(theta_star)).sum::<f64>() / tail.len() as f64;
    Ok(ConvergenceStats {
        final_dist: traj.last_state().distance(theta_star),
        mean_tail_dist,
        escaped: traj.escaped,
    })
}
