//! Multi-cell downlink power control case study.
//!
//! Each base station runs one loop: it adjusts its transmit power (in dB) so
//! that the area-weighted coverage probability of its neighbors reaches a
//! target. Coverage comes from Monte Carlo integration over the station's
//! Voronoi cell with frozen sample points and frozen shadowing, so the
//! resulting vector field is deterministic and smooth enough to
//! finite-difference.
//!
//! Layouts are either a hexagonal lattice wrapped on a torus (every station
//! equivalent, exactly six neighbors at the inter-site distance) or a Poisson
//! point process on a square (neighbors are the six closest).

mod experiments;
mod geometry;
mod scene;

pub use experiments::{
    hexagonal_experiment, snapshot_instability, HexagonalConfig, HexagonalRun, PoissonConfig,
    SnapshotReport, SnapshotRow,
};
pub use geometry::{hexagonal_layout, poisson_layout, NetworkLayout};
pub use scene::{
    find_equal_coverage, shannon_rate, sinr, EqualizeOptions, InterferenceField, RadioParams,
    SamplePoint, Scene, ShadowField,
};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Stable stream derivation so parallel work items own independent,
/// order-independent RNG streams (splitmix64 finalizer).
pub(crate) fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
