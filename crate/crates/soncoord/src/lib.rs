//! Coordination of parallel self-optimizing control loops.
//!
//! Networks increasingly tune themselves: many small control loops each watch
//! one performance indicator and adjust one parameter. Loops that are stable
//! in isolation can destabilize each other when run in parallel. This crate
//! models the parallel system as an ODE `theta_dot = F(theta)`, tests
//! stability, synthesizes a coordination matrix `C = -A^T W` that provably
//! stabilizes any invertible linear system while staying distributable, and
//! simulates the noisy discrete-time operation networks actually run
//! (stochastic approximation with synchronous, round-robin or random update
//! schedules).
//!
//! Two desk-scale wireless case studies exercise the theory end to end:
//!
//! - [`admission`]: a processor-sharing queue under joint resource-allocation
//!   and admission-control loops, with its closed-form stationary
//!   distribution and a stability-region scan over operating points;
//! - [`interference`]: multi-cell downlink power control on a hexagonal torus
//!   or Poisson layout, driven by Monte Carlo coverage probabilities with
//!   frozen randomness, including the instability-probability-vs-density
//!   experiment.
//!
//! Entry points: [`model::make_linear_field`], [`stability::eigen_stability`],
//! [`coordination::Coordinator`], [`dynamics::integrate_ode`],
//! [`dynamics::simulate_sa`], [`estimation::least_squares_fit`]. The
//! `soncoord` binary exposes everything as subcommands; `examples/` holds one
//! runnable walkthrough per capability.

pub mod admission;
pub mod cli;
pub mod coordination;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod interference;
pub mod io;
pub mod matexp;
pub mod model;
pub mod stability;

pub use error::{Error, Result};
pub use model::{ParamVector, VectorField};
