//! Base-station layouts: hexagonal torus and Poisson square.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

use super::derive_seed;

/// Station positions with the geometry needed to evaluate coverage:
/// rectangle extents, wrap-around flag and per-station neighbor sets.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkLayout {
    positions: Vec<(f64, f64)>,
    width: f64,
    height: f64,
    toroidal: bool,
    neighbor_sets: Vec<Vec<usize>>,
    /// Poisson draws discarded because they produced fewer than two stations.
    resamples: u32,
}

impl NetworkLayout {
    pub fn n_bs(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn is_toroidal(&self) -> bool {
        self.toroidal
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbor_sets[i]
    }

    pub fn resamples(&self) -> u32 {
        self.resamples
    }

    /// Distance from an arbitrary point to a station, wrap-around aware.
    pub fn distance_to_bs(&self, point: (f64, f64), bs: usize) -> f64 {
        let (bx, by) = self.positions[bs];
        if self.toroidal {
            let dx = (point.0 - bx).rem_euclid(self.width);
            let dy = (point.1 - by).rem_euclid(self.height);
            let dx = dx.min(self.width - dx);
            let dy = dy.min(self.height - dy);
            (dx * dx + dy * dy).sqrt()
        } else {
            ((point.0 - bx).powi(2) + (point.1 - by).powi(2)).sqrt()
        }
    }

    pub fn bs_distance(&self, i: usize, j: usize) -> f64 {
        self.distance_to_bs(self.positions[i], j)
    }

    /// Index of the nearest station: the cell assignment rule. Nearest-BS
    /// cells do not move when powers change, which keeps the coverage
    /// integration domain fixed during power control.
    pub fn cell_of(&self, point: (f64, f64)) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.n_bs() {
            let d = self.distance_to_bs(point, i);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// For lattice layouts: the permutation induced by translating station 0
    /// onto station `target`. Returns `perm` with `perm[i]` the station that
    /// station `i` lands on, or None when the translation does not map the
    /// set onto itself (non-lattice layouts).
    pub fn translation_permutation(&self, target: usize) -> Option<Vec<usize>> {
        if !self.toroidal {
            return None;
        }
        let (x0, y0) = self.positions[0];
        let (xt, yt) = self.positions[target];
        let shift = (xt - x0, yt - y0);
        let tol = 1e-9 * self.width.max(self.height);
        let mut perm = Vec::with_capacity(self.n_bs());
        for i in 0..self.n_bs() {
            let (xi, yi) = self.positions[i];
            let moved = (xi + shift.0, yi + shift.1);
            let mut found = None;
            for j in 0..self.n_bs() {
                if self.distance_to_bs(moved, j) < tol {
                    found = Some(j);
                    break;
                }
            }
            perm.push(found?);
        }
        Some(perm)
    }
}

fn k_nearest(positions_count: usize, dist: impl Fn(usize, usize) -> f64, k: usize) -> Vec<Vec<usize>> {
    (0..positions_count)
        .map(|i| {
            let mut others: Vec<usize> = (0..positions_count).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist(i, a).partial_cmp(&dist(i, b)).unwrap());
            others.truncate(k);
            others.sort_unstable();
            others
        })
        .collect()
}

/// Triangular lattice wrapped on a rectangular torus.
///
/// `n` must factor as `rows x cols` with an even number of rows (so the
/// staggering wraps) and at least 4 rows and 3 columns (so the six lattice
/// neighbors stay distinct). 12 stations tile as 4x3. Every station then has
/// exactly six neighbors at distance `isd` and all stations are equivalent.
pub fn hexagonal_layout(n: usize, isd_km: f64) -> Result<NetworkLayout> {
    if !(isd_km > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inter-site distance must be > 0, got {isd_km}"
        )));
    }
    let mut tiling = None;
    let mut best_aspect = f64::INFINITY;
    for rows in (4..=n).step_by(2) {
        if n % rows != 0 {
            continue;
        }
        let cols = n / rows;
        if cols < 3 {
            continue;
        }
        let aspect = ((rows as f64 * 3f64.sqrt() / 2.0) / cols as f64).ln().abs();
        if aspect < best_aspect {
            best_aspect = aspect;
            tiling = Some((rows, cols));
        }
    }
    let (rows, cols) = tiling.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "no rectangular torus tiling for {n} stations (need rows even >= 4, cols >= 3)"
        ))
    })?;

    let row_height = isd_km * 3f64.sqrt() / 2.0;
    let width = cols as f64 * isd_km;
    let height = rows as f64 * row_height;
    let mut positions = Vec::with_capacity(n);
    for row in 0..rows {
        let offset = if row % 2 == 0 { 0.0 } else { isd_km / 2.0 };
        for col in 0..cols {
            positions.push((col as f64 * isd_km + offset, row as f64 * row_height));
        }
    }

    let mut layout = NetworkLayout {
        positions,
        width,
        height,
        toroidal: true,
        neighbor_sets: Vec::new(),
        resamples: 0,
    };
    layout.neighbor_sets = k_nearest(n, |i, j| layout.bs_distance(i, j), 6);

    // every neighbor must sit at exactly the inter-site distance
    for i in 0..n {
        for &j in &layout.neighbor_sets[i] {
            let d = layout.bs_distance(i, j);
            if (d - isd_km).abs() > 1e-9 * isd_km {
                return Err(Error::InvalidArgument(format!(
                    "tiling {rows}x{cols} is not a valid hexagonal torus: \
                     neighbor distance {d} differs from isd {isd_km}"
                )));
            }
        }
    }
    Ok(layout)
}

/// Poisson point process on a square of the given area; neighbor sets are
/// the six closest stations (all of them when fewer exist). Draws with fewer
/// than two stations are resampled and counted.
pub fn poisson_layout(density_per_km2: f64, area_km2: f64, seed: u64) -> Result<NetworkLayout> {
    if !(density_per_km2 > 0.0) || !(area_km2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "density and area must be > 0, got {density_per_km2}, {area_km2}"
        )));
    }
    let side = area_km2.sqrt();
    let mean = density_per_km2 * area_km2;
    let poisson = Poisson::new(mean).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut resamples = 0u32;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, resamples as u64));
        let n = poisson.sample(&mut rng) as usize;
        if n < 2 {
            resamples += 1;
            if resamples > 1000 {
                return Err(Error::NonConvergence {
                    what: format!("Poisson layout at density {density_per_km2}"),
                    iters: 1000,
                });
            }
            continue;
        }
        let positions: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.0..side), rng.random_range(0.0..side)))
            .collect();
        let mut layout = NetworkLayout {
            positions,
            width: side,
            height: side,
            toroidal: false,
            neighbor_sets: Vec::new(),
            resamples,
        };
        layout.neighbor_sets = k_nearest(n, |i, j| layout.bs_distance(i, j), 6);
        return Ok(layout);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hexagonal_12_basic_properties() {
        let layout = hexagonal_layout(12, 0.5).unwrap();
        assert_eq!(layout.n_bs(), 12);
        assert!(layout.is_toroidal());

        // pairwise minimum torus distance equals the inter-site distance
        let mut min_d = f64::INFINITY;
        for i in 0..12 {
            for j in 0..12 {
                if i != j {
                    min_d = min_d.min(layout.bs_distance(i, j));
                }
            }
        }
        assert_relative_eq!(min_d, 0.5, epsilon = 1e-12);

        // exactly six neighbors, all at the inter-site distance
        for i in 0..12 {
            assert_eq!(layout.neighbors(i).len(), 6);
            for &j in layout.neighbors(i) {
                assert_relative_eq!(layout.bs_distance(i, j), 0.5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn hexagonal_neighbor_sets_symmetric() {
        let layout = hexagonal_layout(12, 0.5).unwrap();
        for i in 0..12 {
            for &j in layout.neighbors(i) {
                assert!(
                    layout.neighbors(j).contains(&i),
                    "neighbor relation not symmetric: {i} -> {j}"
                );
            }
        }
    }

    #[test]
    fn hexagonal_translations_permute_stations() {
        let layout = hexagonal_layout(12, 0.5).unwrap();
        for target in 0..12 {
            let perm = layout
                .translation_permutation(target)
                .expect("lattice translations map the torus onto itself");
            assert_eq!(perm[0], target);
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn hexagonal_rejects_incompatible_counts() {
        assert!(hexagonal_layout(7, 0.5).is_err());
        assert!(hexagonal_layout(4, 0.5).is_err());
    }

    #[test]
    fn poisson_layout_is_seed_deterministic() {
        let a = poisson_layout(3.0, 4.0, 42).unwrap();
        let b = poisson_layout(3.0, 4.0, 42).unwrap();
        assert_eq!(a, b);
        let c = poisson_layout(3.0, 4.0, 43).unwrap();
        assert_ne!(a.positions(), c.positions());
        assert!(!a.is_toroidal());
        assert_relative_eq!(a.area(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn poisson_mean_count_matches_intensity() {
        let mut total = 0usize;
        let runs = 200;
        for seed in 0..runs {
            total += poisson_layout(3.0, 4.0, seed).unwrap().n_bs();
        }
        let mean = total as f64 / runs as f64;
        // E[N] = 12, std of the mean ~ sqrt(12/200) ~ 0.25
        assert!((mean - 12.0).abs() < 1.0, "mean count {mean}");
    }

    #[test]
    fn poisson_neighbor_sets_capped_at_six() {
        let layout = poisson_layout(2.0, 4.0, 7).unwrap();
        let n = layout.n_bs();
        for i in 0..n {
            assert_eq!(layout.neighbors(i).len(), 6.min(n - 1));
            assert!(!layout.neighbors(i).contains(&i));
        }
    }

    #[test]
    fn cell_of_picks_nearest() {
        let layout = hexagonal_layout(12, 0.5).unwrap();
        for (i, &(x, y)) in layout.positions().iter().enumerate() {
            assert_eq!(layout.cell_of((x + 1e-4, y + 1e-4)), i);
        }
    }
}
