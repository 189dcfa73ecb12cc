//! Regular coarse and fine lattices and the nearest-neighbour map between them.
//!
//! Lattices are cell-centred: a side of `k` points over `[a, b]` puts nodes at
//! `a + (i + 1/2)(b - a)/k`. With that convention every coarse node sits at the
//! centre of its cell, so a 20-point fine side over a 10-point coarse side puts
//! exactly four fine nodes in each coarse cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar coordinate in abstract distance units.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn square(min: f64, max: f64) -> Self {
        Extent {
            x_min: min,
            x_max: max,
            y_min: min,
            y_max: max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(Error::Config(format!("extent {self:?} has no positive area")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub extent: Extent,
    pub fine_side: usize,
    pub coarse_side: usize,
}

impl GridSpec {
    pub fn new(extent: Extent, fine_side: usize, coarse_side: usize) -> Self {
        GridSpec {
            extent,
            fine_side,
            coarse_side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.extent.validate()?;
        if self.coarse_side < 2 {
            return Err(Error::Config(format!(
                "coarse side {} must be at least 2",
                self.coarse_side
            )));
        }
        if self.fine_side < self.coarse_side {
            return Err(Error::Config(format!(
                "fine side {} must be at least the coarse side {}",
                self.fine_side, self.coarse_side
            )));
        }
        Ok(())
    }
}

/// An ordered regular lattice of `nx * ny` nodes, row-major (x varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDomain {
    locations: Vec<Point>,
    spacing: [f64; 2],
    /// Smallest step along each axis; equals `spacing` on a regular lattice.
    min_step: [f64; 2],
    shape: [usize; 2],
    // Built by `lattice`: distances follow from index lags, so equal lags give bit-identical distances.
    uniform: bool,
}

impl SpatialDomain {
    /// Cell-centred lattice with `nx` by `ny` nodes over `extent`.
    pub fn lattice(extent: Extent, nx: usize, ny: usize) -> Result<Self> {
        extent.validate()?;
        if nx == 0 || ny == 0 {
            return Err(Error::Config("lattice needs at least one node per axis".into()));
        }
        let dx = extent.width() / nx as f64;
        let dy = extent.height() / ny as f64;
        let xs: Vec<f64> = (0..nx).map(|i| extent.x_min + (i as f64 + 0.5) * dx).collect();
        let ys: Vec<f64> = (0..ny).map(|j| extent.y_min + (j as f64 + 0.5) * dy).collect();
        let mut domain = Self::from_axes(&xs, &ys)?;
        domain.spacing = [dx, dy];
        domain.min_step = [dx, dy];
        domain.uniform = true;
        Ok(domain)
    }

    /// Lattice from explicit, strictly increasing axis coordinates.
    pub fn from_axes(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::Config("lattice axes must be nonempty".into()));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(xs) || !increasing(ys) {
            return Err(Error::Config("lattice axes must be strictly increasing".into()));
        }
        let step = |v: &[f64]| {
            if v.len() > 1 {
                (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64
            } else {
                0.0
            }
        };
        let mut locations = Vec::with_capacity(xs.len() * ys.len());
        for &y in ys {
            for &x in xs {
                locations.push([x, y]);
            }
        }
        let min_step = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let regular = |v: &[f64]| {
            let h = step(v);
            v.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
        };
        Ok(SpatialDomain {
            locations,
            spacing: [step(xs), step(ys)],
            min_step: [min_step(xs), min_step(ys)],
            shape: [xs.len(), ys.len()],
            uniform: regular(xs) && regular(ys),
        })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Point] {
        &self.locations
    }

    pub fn location(&self, index: usize) -> Point {
        self.locations[index]
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    /// Equal steps along each axis.
    pub fn is_regular(&self) -> bool {
        self.uniform
    }

    /// `[nx, ny]`.
    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        if self.uniform {
            let nx = self.shape[0];
            let lx = (i % nx).abs_diff(j % nx) as f64;
            let ly = (i / nx).abs_diff(j / nx) as f64;
            (lx * self.spacing[0]).hypot(ly * self.spacing[1])
        } else {
            euclidean(self.locations[i], self.locations[j])
        }
    }

    /// Largest pairwise distance (corner to corner for a lattice).
    pub fn diameter(&self) -> f64 {
        let first = self.locations[0];
        let last = self.locations[self.len() - 1];
        euclidean(first, last)
    }

    /// Smallest distance between two distinct nodes.
    pub fn min_spacing(&self) -> f64 {
        let [nx, ny] = self.shape;
        match (nx > 1, ny > 1) {
            (true, true) => self.min_step[0].min(self.min_step[1]),
            (true, false) => self.min_step[0],
            (false, true) => self.min_step[1],
            (false, false) => f64::INFINITY,
        }
    }
}

pub fn euclidean(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn squared_distance(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Index of the node closest to `point`; ties go to the lowest index.
pub fn nearest_in(domain: &SpatialDomain, point: Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &loc) in domain.locations.iter().enumerate() {
        let d = squared_distance(loc, point);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseFineMap {
    pub fine_to_coarse: Vec<usize>,
    pub coarse_to_fine: Vec<Vec<usize>>,
}

impl CoarseFineMap {
    pub fn between(coarse: &SpatialDomain, fine: &SpatialDomain) -> Self {
        let fine_to_coarse: Vec<usize> =
            fine.locations().iter().map(|&p| nearest_in(coarse, p)).collect();
        let mut coarse_to_fine = vec![Vec::new(); coarse.len()];
        for (w, &s) in fine_to_coarse.iter().enumerate() {
            coarse_to_fine[s].push(w);
        }
        CoarseFineMap {
            fine_to_coarse,
            coarse_to_fine,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPair {
    pub coarse: SpatialDomain,
    pub fine: SpatialDomain,
    pub map: CoarseFineMap,
}

impl GridPair {
    /// Pair two existing domains (e.g. ingested from files).
    pub fn from_domains(coarse: SpatialDomain, fine: SpatialDomain) -> Self {
        let map = CoarseFineMap::between(&coarse, &fine);
        GridPair { coarse, fine, map }
    }
}

pub fn build_grids(spec: &GridSpec) -> Result<GridPair> {
    spec.validate()?;
    let coarse = SpatialDomain::lattice(spec.extent, spec.coarse_side, spec.coarse_side)?;
    let fine = SpatialDomain::lattice(spec.extent, spec.fine_side, spec.fine_side)?;
    Ok(GridPair::from_domains(coarse, fine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(domain: &SpatialDomain, p: Point) -> usize {
        let d: Vec<f64> = domain
            .locations()
            .iter()
            .map(|&q| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2))
            .collect();
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        d.iter().position(|&v| v == min).unwrap()
    }

    #[test]
    fn irregular_axes_use_the_smallest_step() {
        let d = SpatialDomain::from_axes(&[0.0, 1.0, 1.2, 3.0], &[0.0, 2.0]).unwrap();
        assert!(!d.is_regular());
        assert!((d.min_spacing() - 0.2).abs() < 1e-12);
        let brute = (0..d.len())
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| d.distance(i, j))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(d.min_spacing(), brute);
    }

    #[test]
    fn twenty_by_ten_has_four_fine_per_cell() {
        let pair = build_grids(&GridSpec::new(Extent::square(0.0, 20.0), 20, 10)).unwrap();
        assert_eq!(pair.fine.len(), 400);
        assert_eq!(pair.coarse.len(), 100);
        assert!(pair.map.coarse_to_fine.iter().all(|c| c.len() == 4));
        assert_eq!(pair.fine.spacing(), [1.0, 1.0]);
        assert_eq!(pair.coarse.spacing(), [2.0, 2.0]);
    }

    #[test]
    fn identical_lattices_map_to_identity() {
        let pair = build_grids(&GridSpec::new(Extent::square(0.0, 1.0), 2, 2)).unwrap();
        assert_eq!(pair.fine, pair.coarse);
        assert_eq!(pair.map.fine_to_coarse, vec![0, 1, 2, 3]);
    }

    #[test]
    fn non_nesting_resolution_partitions_the_fine_grid() {
        let pair = build_grids(&GridSpec::new(Extent::square(0.0, 1.0), 55, 25)).unwrap();
        assert_eq!(pair.fine.len(), 3025);
        assert_eq!(pair.coarse.len(), 625);
        let total: usize = pair.map.coarse_to_fine.iter().map(Vec::len).sum();
        assert_eq!(total, 3025);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = [
            GridSpec::new(Extent::square(0.0, 0.0), 4, 2),
            GridSpec::new(Extent::square(0.0, 1.0), 4, 1),
            GridSpec::new(Extent::square(0.0, 1.0), 2, 4),
        ];
        for spec in bad {
            assert!(matches!(build_grids(&spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn nearest_on_node_and_midpoint() {
        let d = SpatialDomain::lattice(Extent::square(0.0, 1.0), 2, 2).unwrap();
        assert_eq!(nearest_in(&d, d.location(3)), 3);
        // (0.5, 0.25) is equidistant from nodes 0 and 1.
        assert_eq!(nearest_in(&d, [0.5, 0.25]), 0);
        assert_eq!(nearest_in(&d, [0.5, 0.5]), 0);
    }

    #[test]
    fn nearest_matches_linear_scan_on_random_points() {
        use rand::{Rng, SeedableRng};
        let d = SpatialDomain::lattice(Extent::square(-3.0, 7.0), 13, 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = [rng.random_range(-5.0..9.0), rng.random_range(-5.0..9.0)];
            assert_eq!(nearest_in(&d, p), brute_nearest(&d, p));
        }
    }

    proptest! {
        #[test]
        fn map_is_a_consistent_partition(coarse in 2usize..9, extra in 0usize..12, w in 0.5f64..30.0) {
            let pair = build_grids(&GridSpec::new(Extent::square(0.0, w), coarse + extra, coarse)).unwrap();
            let total: usize = pair.map.coarse_to_fine.iter().map(Vec::len).sum();
            prop_assert_eq!(total, pair.fine.len());
            for (s, members) in pair.map.coarse_to_fine.iter().enumerate() {
                for &f in members {
                    prop_assert_eq!(pair.map.fine_to_coarse[f], s);
                }
            }
            for (f, &s) in pair.map.fine_to_coarse.iter().enumerate() {
                prop_assert_eq!(s, brute_nearest(&pair.coarse, pair.fine.location(f)));
            }
        }
    }
}
