//! Covariance kernels, compactly supported tapers and matrix assembly.
//!
//! Matérn parameterization: `C(d) = sd^2 * 2^(1-nu)/Gamma(nu) * (d/range)^nu * K_nu(d/range)`,
//! without the `sqrt(2 nu)` factor some libraries fold into the range. With
//! `nu = 1/2` it is the exponential kernel `sd^2 * exp(-d/range)`. Range
//! estimates are only comparable to other software using the same convention.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpatialDomain;
use crate::special::matern_correlation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Exponential,
    Matern,
}

impl KernelFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelFamily::Exponential => "exponential",
            KernelFamily::Matern => "matern",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(KernelFamily::Exponential),
            "matern" => Ok(KernelFamily::Matern),
            other => Err(Error::Config(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Stationary isotropic kernel: range `phi`, standard deviation `sigma`, smoothness `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub family: KernelFamily,
    pub range: f64,
    pub sd: f64,
    /// Ignored by the exponential family.
    pub smoothness: f64,
}

impl KernelParams {
    pub fn exponential(range: f64, sd: f64) -> Self {
        KernelParams {
            family: KernelFamily::Exponential,
            range,
            sd,
            smoothness: 0.5,
        }
    }

    pub fn matern(range: f64, sd: f64, smoothness: f64) -> Self {
        KernelParams {
            family: KernelFamily::Matern,
            range,
            sd,
            smoothness,
        }
    }

    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.range > 0.0
            && self.sd > 0.0
            && self.range.is_finite()
            && self.sd.is_finite()
            && (self.family == KernelFamily::Exponential
                || (self.smoothness > 0.0 && self.smoothness.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("kernel parameters must be positive: {self:?}")))
        }
    }

    /// Correlation at distance `d >= 0` (unchecked).
    pub fn correlation(&self, d: f64) -> f64 {
        let r = d / self.range;
        match self.family {
            KernelFamily::Exponential => (-r).exp(),
            KernelFamily::Matern => matern_correlation(self.smoothness, r),
        }
    }

    /// Covariance at distance `d >= 0` (unchecked).
    pub fn covariance(&self, d: f64) -> f64 {
        self.variance() * self.correlation(d)
    }
}

pub fn kernel_eval(params: &KernelParams, d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("distance must be nonnegative, got {d}")));
    }
    params.validate()?;
    Ok(params.covariance(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaperFamily {
    /// `(1 - d/rho)^4_+ (1 + 4 d/rho)`, positive definite in up to three dimensions.
    #[default]
    Wendland1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaperSpec {
    pub range: f64,
    #[serde(default)]
    pub family: TaperFamily,
}

impl TaperSpec {
    pub fn wendland1(range: f64) -> Self {
        TaperSpec {
            range,
            family: TaperFamily::Wendland1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.range > 0.0 && self.range.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("taper range must be positive, got {}", self.range)))
        }
    }

    pub fn weight(&self, d: f64) -> f64 {
        let r = d / self.range;
        if r >= 1.0 {
            return 0.0;
        }
        match self.family {
            TaperFamily::Wendland1 => (1.0 - r).powi(4) * (1.0 + 4.0 * r),
        }
    }
}

pub fn taper_eval(spec: &TaperSpec, d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("distance must be nonnegative, got {d}")));
    }
    spec.validate()?;
    Ok(spec.weight(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TemporalStructure {
    Iid,
    Ar1 { rho: f64 },
}

impl TemporalStructure {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TemporalStructure::Ar1 { rho } if !(rho.abs() < 1.0) => Err(Error::Domain(format!(
                "AR(1) coefficient must lie in (-1, 1), got {rho}"
            ))),
            _ => Ok(()),
        }
    }

    /// Temporal correlation at integer lag.
    pub fn correlation(&self, lag: i64) -> f64 {
        match *self {
            TemporalStructure::Iid => {
                if lag == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            TemporalStructure::Ar1 { rho } => rho.powi(lag.unsigned_abs() as i32),
        }
    }

    pub fn is_iid(&self) -> bool {
        matches!(self, TemporalStructure::Iid)
    }
}

/// Symmetric sparse matrix storing the lower triangle (diagonal included) row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymmetric {
    /// Build from per-row lower-triangle entries; columns within a row must ascend and be `<= row`.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (j, v) in row {
                debug_assert!(j <= i);
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseSymmetric {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Lower-triangle entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// Stored entries counted over both triangles.
    pub fn stored_entries(&self) -> usize {
        let diag = (0..self.n).filter(|&i| self.row(i).any(|(j, _)| j == i)).count();
        2 * self.cols.len() - diag
    }

    /// Fraction of the `n^2` entries that are structurally nonzero.
    pub fn nonzero_fraction(&self) -> f64 {
        self.stored_entries() as f64 / (self.n as f64 * self.n as f64)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Full (both-triangle) adjacency lists, including the diagonal.
    pub(crate) fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                adj[i].push((j, v));
                if j != i {
                    adj[j].push((i, v));
                }
            }
        }
        for a in &mut adj {
            a.sort_by_key(|e| e.0);
        }
        adj
    }

    fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.vals[k] = f(i, self.cols[k], self.vals[k]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymmetricMatrix {
    Dense(DMatrix<f64>),
    Sparse(SparseSymmetric),
}

impl SymmetricMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SymmetricMatrix::Dense(m) => m.nrows(),
            SymmetricMatrix::Sparse(s) => s.dim(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            SymmetricMatrix::Dense(m) => m[(i, j)],
            SymmetricMatrix::Sparse(s) => s.get(i, j),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, SymmetricMatrix::Sparse(_))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymmetricMatrix::Dense(m) => m.clone(),
            SymmetricMatrix::Sparse(s) => s.to_dense(),
        }
    }

    pub fn add_diagonal(&mut self, value: f64) {
        match self {
            SymmetricMatrix::Dense(m) => {
                for i in 0..m.nrows() {
                    m[(i, i)] += value;
                }
            }
            SymmetricMatrix::Sparse(s) => {
                let mut rows: Vec<Vec<(usize, f64)>> = (0..s.n).map(|i| s.row(i).collect()).collect();
                for (i, row) in rows.iter_mut().enumerate() {
                    match row.last_mut() {
                        Some(last) if last.0 == i => last.1 += value,
                        _ => row.push((i, value)),
                    }
                }
                *s = SparseSymmetric::from_rows(rows);
            }
        }
    }

    /// Elementwise sum; the result is sparse only if both operands are.
    pub fn add(&self, other: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "cannot add {}x{0} and {}x{1}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(match (self, other) {
            (SymmetricMatrix::Sparse(a), SymmetricMatrix::Sparse(b)) => {
                let rows = (0..a.n)
                    .map(|i| {
                        let mut merged: Vec<(usize, f64)> = a.row(i).chain(b.row(i)).collect();
                        merged.sort_by_key(|e| e.0);
                        let mut out: Vec<(usize, f64)> = Vec::with_capacity(merged.len());
                        for (j, v) in merged {
                            match out.last_mut() {
                                Some(last) if last.0 == j => last.1 += v,
                                _ => out.push((j, v)),
                            }
                        }
                        out
                    })
                    .collect();
                SymmetricMatrix::Sparse(SparseSymmetric::from_rows(rows))
            }
            _ => SymmetricMatrix::Dense(self.to_dense() + other.to_dense()),
        })
    }

    /// Coordinate-list text (`row col value`, lower triangle) for debugging.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        let n = self.dim();
        for i in 0..n {
            match self {
                SymmetricMatrix::Dense(m) => {
                    for j in 0..=i {
                        if m[(i, j)] != 0.0 {
                            out.push_str(&format!("{i} {j} {}\n", m[(i, j)]));
                        }
                    }
                }
                SymmetricMatrix::Sparse(s) => {
                    for (j, v) in s.row(i) {
                        out.push_str(&format!("{i} {j} {v}\n"));
                    }
                }
            }
        }
        out
    }
}

/// Dense spatial covariance matrix of `params` over `domain`.
pub fn cov_matrix(domain: &SpatialDomain, params: &KernelParams) -> Result<SymmetricMatrix> {
    params.validate()?;
    if domain.is_empty() {
        return Err(Error::Dimension("empty domain".into()));
    }
    Ok(SymmetricMatrix::Dense(dense_kernel_matrix(domain, params)))
}

pub(crate) fn dense_kernel_matrix(domain: &SpatialDomain, params: &KernelParams) -> DMatrix<f64> {
    DistanceTable::new(domain).kernel_matrix(params)
}

/// Pairwise distances of a domain, stored as indices into the distinct values.
///
/// Kernel assembly then costs one kernel evaluation per distinct distance,
/// which on a lattice is far fewer than the number of pairs.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    n: usize,
    distances: Vec<f64>,
    index: Vec<u32>,
}

impl DistanceTable {
    pub fn new(domain: &SpatialDomain) -> Self {
        let n = domain.len();
        let mut lookup: HashMap<u64, u32> = HashMap::new();
        let mut distances = vec![0.0];
        lookup.insert(0f64.to_bits(), 0);
        let mut index = vec![0u32; n * n];
        for j in 0..n {
            for i in (j + 1)..n {
                let d = domain.distance(i, j);
                let k = *lookup.entry(d.to_bits()).or_insert_with(|| {
                    distances.push(d);
                    (distances.len() - 1) as u32
                });
                index[i * n + j] = k;
                index[j * n + i] = k;
            }
        }
        DistanceTable { n, distances, index }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn distinct(&self) -> usize {
        self.distances.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[self.index[i * self.n + j] as usize]
    }

    /// The distinct distances, indexed by `index`.
    pub fn distinct_distances(&self) -> &[f64] {
        &self.distances
    }

    /// Position of the distance between `i` and `j` in `distinct_distances`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        self.index[i * self.n + j] as usize
    }

    pub fn kernel_matrix(&self, params: &KernelParams) -> DMatrix<f64> {
        let values: Vec<f64> = self.distances.iter().map(|&d| params.covariance(d)).collect();
        DMatrix::from_fn(self.n, self.n, |i, j| values[self.index[i * self.n + j] as usize])
    }
}

/// Pairs of nodes closer than the taper range, with distances and taper weights.
#[derive(Debug, Clone)]
pub struct TaperPattern {
    n: usize,
    distances: Vec<f64>,
    // Per row `i`: (j <= i, distinct-distance index, taper weight), ascending in j.
    rows: Vec<Vec<(usize, u32, f64)>>,
}

impl TaperPattern {
    pub fn new(domain: &SpatialDomain, taper: &TaperSpec) -> Result<Self> {
        taper.validate()?;
        if domain.is_empty() {
            return Err(Error::Dimension("empty domain".into()));
        }
        let n = domain.len();
        let mut lookup: HashMap<u64, u32> = HashMap::new();
        let mut distances = Vec::new();
        let rows = (0..n)
            .map(|i| {
                (0..=i)
                    .filter_map(|j| {
                        let d = domain.distance(i, j);
                        if d >= taper.range {
                            return None;
                        }
                        let k = *lookup.entry(d.to_bits()).or_insert_with(|| {
                            distances.push(d);
                            (distances.len() - 1) as u32
                        });
                        Some((j, k, taper.weight(d)))
                    })
                    .collect()
            })
            .collect();
        Ok(TaperPattern { n, distances, rows })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries counted over both triangles.
    pub fn stored_entries(&self) -> usize {
        self.rows.iter().map(|r| 2 * r.len() - 1).sum()
    }

    /// Tapered kernel matrix: kernel times taper on the retained pairs.
    pub fn assemble(&self, params: &KernelParams) -> SparseSymmetric {
        let values: Vec<f64> = self.distances.iter().map(|&d| params.covariance(d)).collect();
        let rows = self
            .rows
            .iter()
            .map(|row| row.iter().map(|&(j, k, w)| (j, values[k as usize] * w)).collect())
            .collect();
        SparseSymmetric::from_rows(rows)
    }
}

/// Sparse tapered covariance `kernel ⊙ taper`; zero wherever the distance reaches the taper range.
pub fn cov_tapered(
    domain: &SpatialDomain,
    params: &KernelParams,
    taper: &TaperSpec,
) -> Result<SymmetricMatrix> {
    params.validate()?;
    Ok(SymmetricMatrix::Sparse(TaperPattern::new(domain, taper)?.assemble(params)))
}

/// Separable space-time covariance `R_T ⊗ spatial` over times `1..=periods`.
pub fn spacetime_cov(
    spatial: &SymmetricMatrix,
    temporal: &TemporalStructure,
    periods: usize,
) -> Result<SymmetricMatrix> {
    if periods == 0 {
        return Err(Error::Domain("need at least one period".into()));
    }
    let times: Vec<i64> = (1..=periods as i64).collect();
    spacetime_cov_at(spatial, temporal, &times)
}

/// Separable space-time covariance at arbitrary integer time labels (time-major ordering).
pub fn spacetime_cov_at(
    spatial: &SymmetricMatrix,
    temporal: &TemporalStructure,
    times: &[i64],
) -> Result<SymmetricMatrix> {
    temporal.validate()?;
    if times.is_empty() {
        return Err(Error::Domain("need at least one period".into()));
    }
    let n = spatial.dim();
    let nt = times.len();
    match spatial {
        SymmetricMatrix::Dense(s) => {
            let mut m = DMatrix::zeros(n * nt, n * nt);
            for a in 0..nt {
                for b in 0..=a {
                    let r = temporal.correlation(times[a] - times[b]);
                    if r == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        for i in 0..n {
                            let v = r * s[(i, j)];
                            m[(a * n + i, b * n + j)] = v;
                            m[(b * n + j, a * n + i)] = v;
                        }
                    }
                }
            }
            Ok(SymmetricMatrix::Dense(m))
        }
        SymmetricMatrix::Sparse(s) => {
            let adj = s.adjacency();
            let mut rows = Vec::with_capacity(n * nt);
            for a in 0..nt {
                for i in 0..n {
                    let mut row = Vec::new();
                    for b in 0..a {
                        let r = temporal.correlation(times[a] - times[b]);
                        if r == 0.0 {
                            continue;
                        }
                        row.extend(adj[i].iter().map(|&(j, v)| (b * n + j, r * v)));
                    }
                    row.extend(s.row(i).map(|(j, v)| (a * n + j, v)));
                    rows.push(row);
                }
            }
            Ok(SymmetricMatrix::Sparse(SparseSymmetric::from_rows(rows)))
        }
    }
}

/// `cov ⊙ x xᵀ`, keeping the sparsity pattern.
pub fn hadamard_rank1(cov: &SymmetricMatrix, x: &[f64]) -> Result<SymmetricMatrix> {
    if x.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "covariate length {} does not match matrix dimension {}",
            x.len(),
            cov.dim()
        )));
    }
    Ok(match cov {
        SymmetricMatrix::Dense(m) => {
            let mut out = m.clone();
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    out[(i, j)] = m[(i, j)] * x[i] * x[j];
                }
            }
            SymmetricMatrix::Dense(out)
        }
        SymmetricMatrix::Sparse(s) => SymmetricMatrix::Sparse(s.map_values(|i, j, v| v * x[i] * x[j])),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Extent;
    use proptest::prelude::*;

    fn lattice(side: usize, w: f64) -> SpatialDomain {
        SpatialDomain::lattice(Extent::square(0.0, w), side, side).unwrap()
    }

    #[test]
    fn kernel_at_zero_is_variance() {
        let k = KernelParams::matern(0.3, 2.0, 1.3);
        assert_eq!(kernel_eval(&k, 0.0).unwrap(), 4.0);
        assert_eq!(kernel_eval(&KernelParams::exponential(1.0, 0.5), 0.0).unwrap(), 0.25);
    }

    #[test]
    fn exponential_closed_form() {
        let k = KernelParams::exponential(0.1, 0.001);
        let want = 0.001f64.powi(2) * (-1.0f64).exp();
        assert!((kernel_eval(&k, 0.1).unwrap() - want).abs() < 1e-22);
    }

    #[test]
    fn matern_half_is_exponential() {
        for &d in &[0.0, 0.01, 0.2, 1.0, 3.7, 12.0] {
            let m = kernel_eval(&KernelParams::matern(0.7, 1.3, 0.5), d).unwrap();
            let e = kernel_eval(&KernelParams::exponential(0.7, 1.3), d).unwrap();
            assert!((m - e).abs() < 1e-12);
        }
        // Through the Bessel route rather than the shortcut.
        let m = KernelParams::matern(0.7, 1.3, 0.5 + 1e-13);
        assert!((m.covariance(0.9) - 1.69 * (-0.9f64 / 0.7).exp()).abs() < 1e-9);
    }

    #[test]
    fn negative_distance_is_a_domain_error() {
        let k = KernelParams::exponential(1.0, 1.0);
        assert!(matches!(kernel_eval(&k, -0.1), Err(Error::Domain(_))));
        assert!(matches!(taper_eval(&TaperSpec::wendland1(1.0), -1e-9), Err(Error::Domain(_))));
    }

    #[test]
    fn kernel_nonincreasing_on_grid() {
        for k in [
            KernelParams::matern(0.4, 1.0, 0.8),
            KernelParams::matern(2.0, 3.0, 2.5),
            KernelParams::exponential(0.1, 0.001),
        ] {
            let mut prev = f64::INFINITY;
            for i in 0..500 {
                let c = kernel_eval(&k, i as f64 * 0.01).unwrap();
                assert!(c <= prev);
                prev = c;
            }
        }
    }

    #[test]
    fn taper_values() {
        let t = TaperSpec::wendland1(2.0);
        assert_eq!(taper_eval(&t, 0.0).unwrap(), 1.0);
        assert_eq!(taper_eval(&t, 2.0).unwrap(), 0.0);
        assert_eq!(taper_eval(&t, 5.0).unwrap(), 0.0);
        assert!((taper_eval(&t, 1.0).unwrap() - 0.1875).abs() < 1e-15);
        let mut prev = 1.0;
        for i in 0..=200 {
            let w = taper_eval(&t, i as f64 * 0.01).unwrap();
            assert!(w <= prev && (0.0..=1.0).contains(&w));
            prev = w;
        }
    }

    #[test]
    fn single_and_coincident_points() {
        let one = SpatialDomain::from_axes(&[0.3], &[0.4]).unwrap();
        let k = KernelParams::matern(1.0, 2.0, 1.0);
        assert_eq!(cov_matrix(&one, &k).unwrap().to_dense(), DMatrix::from_element(1, 1, 4.0));

        // Coincident points: the perfectly correlated matrix needs jitter to factor.
        let two = vec![[0.0, 0.0], [0.0, 0.0]];
        let m = DMatrix::from_fn(2, 2, |i, j| k.covariance(crate::grid::euclidean(two[i], two[j])));
        assert_eq!(m, DMatrix::from_element(2, 2, 4.0));
        let f = crate::linalg::DenseFactor::new_with_jitter(m, 4.0).unwrap();
        assert!(f.jitter() > 0.0 && f.jitter() <= 4e-6);
    }

    #[test]
    fn dense_matches_double_loop() {
        let d = lattice(3, 1.0);
        let k = KernelParams::exponential(0.4, 1.5);
        let m = cov_matrix(&d, &k).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let p = d.location(i);
                let q = d.location(j);
                let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                let want = 2.25 * (-dist / 0.4).exp();
                assert!((m.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn taper_below_spacing_is_diagonal() {
        let d = lattice(5, 1.0);
        let k = KernelParams::matern(0.5, 0.7, 1.0);
        let m = cov_tapered(&d, &k, &TaperSpec::wendland1(0.1)).unwrap();
        assert_eq!(m.to_dense(), DMatrix::from_diagonal_element(25, 25, 0.7 * 0.7));
    }

    #[test]
    fn wide_taper_matches_dense_hadamard() {
        let d = lattice(6, 1.0);
        let k = KernelParams::matern(0.3, 1.1, 0.8);
        let taper = TaperSpec::wendland1(10.0 * d.diameter());
        let sparse = cov_tapered(&d, &k, &taper).unwrap().to_dense();
        let dense = cov_matrix(&d, &k).unwrap().to_dense();
        for i in 0..36 {
            for j in 0..36 {
                let want = dense[(i, j)] * taper.weight(d.distance(i, j));
                assert!((sparse[(i, j)] - want).abs() <= 1e-6 * want.abs());
                assert_eq!(sparse[(i, j)], want);
            }
        }
    }

    #[test]
    fn short_taper_on_400_points_is_sparse() {
        let d = lattice(20, 1.0);
        let taper = TaperSpec::wendland1(0.05);
        let m = cov_tapered(&d, &KernelParams::exponential(0.2, 1.0), &taper).unwrap();
        let mut pairs = 0usize;
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d.distance(i, j) < 0.05 {
                    pairs += 1;
                }
            }
        }
        match &m {
            SymmetricMatrix::Sparse(s) => {
                assert_eq!(s.stored_entries(), pairs);
                assert!(s.nonzero_fraction() < 0.05);
            }
            _ => unreachable!(),
        }
    }

    fn brute_kron(s: &DMatrix<f64>, rho: f64, t: usize) -> DMatrix<f64> {
        let n = s.nrows();
        DMatrix::from_fn(n * t, n * t, |r, c| {
            let (a, i) = (r / n, r % n);
            let (b, j) = (c / n, c % n);
            rho.powi((a as i32 - b as i32).abs()) * s[(i, j)]
        })
    }

    #[test]
    fn spacetime_kronecker() {
        let d = SpatialDomain::from_axes(&[0.0, 0.5], &[0.0]).unwrap();
        let s = cov_matrix(&d, &KernelParams::exponential(1.0, 1.0)).unwrap();
        let iid = spacetime_cov(&s, &TemporalStructure::Iid, 3).unwrap();
        let ar0 = spacetime_cov(&s, &TemporalStructure::Ar1 { rho: 0.0 }, 3).unwrap();
        assert_eq!(iid, ar0);
        let dense = iid.to_dense();
        for a in 0..3 {
            for b in 0..3 {
                let block = dense.view((a * 2, b * 2), (2, 2));
                if a == b {
                    assert_eq!(block.clone_owned(), s.to_dense());
                } else {
                    assert!(block.iter().all(|&v| v == 0.0));
                }
            }
        }
        let ar = spacetime_cov(&s, &TemporalStructure::Ar1 { rho: 0.8 }, 3).unwrap();
        let want = brute_kron(&s.to_dense(), 0.8, 3);
        assert!((ar.to_dense() - want).abs().max() < 1e-15);
        assert!(spacetime_cov(&s, &TemporalStructure::Ar1 { rho: 1.0 }, 3).is_err());
    }

    #[test]
    fn sparse_spacetime_matches_dense() {
        let d = lattice(4, 1.0);
        let k = KernelParams::matern(0.3, 1.0, 1.0);
        let taper = TaperSpec::wendland1(0.5);
        let sparse = cov_tapered(&d, &k, &taper).unwrap();
        let dense = SymmetricMatrix::Dense(sparse.to_dense());
        for temporal in [TemporalStructure::Iid, TemporalStructure::Ar1 { rho: -0.6 }] {
            let a = spacetime_cov_at(&sparse, &temporal, &[1, 2, 4]).unwrap();
            let b = spacetime_cov_at(&dense, &temporal, &[1, 2, 4]).unwrap();
            assert!(a.is_sparse());
            assert_eq!(a.to_dense(), b.to_dense());
        }
        let iid = spacetime_cov(&sparse, &TemporalStructure::Iid, 3).unwrap();
        let ar0 = spacetime_cov(&sparse, &TemporalStructure::Ar1 { rho: 0.0 }, 3).unwrap();
        assert_eq!(iid, ar0);
    }

    #[test]
    fn hadamard_special_vectors() {
        let d = lattice(3, 1.0);
        let m = cov_matrix(&d, &KernelParams::exponential(0.5, 1.0)).unwrap();
        assert_eq!(hadamard_rank1(&m, &[1.0; 9]).unwrap(), m);
        assert!(hadamard_rank1(&m, &[0.0; 9]).unwrap().to_dense().iter().all(|&v| v == 0.0));
        assert!(matches!(hadamard_rank1(&m, &[1.0; 4]), Err(Error::Dimension(_))));
        let s = cov_tapered(&d, &KernelParams::exponential(0.5, 1.0), &TaperSpec::wendland1(0.4)).unwrap();
        let h = hadamard_rank1(&s, &[0.0; 9]).unwrap();
        match (&s, &h) {
            (SymmetricMatrix::Sparse(a), SymmetricMatrix::Sparse(b)) => {
                assert_eq!(a.stored_entries(), b.stored_entries())
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn hadamard_matches_elementwise_oracle() {
        let d = SpatialDomain::from_axes(&[0.0, 0.3, 0.7, 1.2, 2.0], &[0.0]).unwrap();
        let m = cov_matrix(&d, &KernelParams::matern(0.6, 1.2, 1.5)).unwrap();
        let x = [0.3, -1.2, 2.5, 0.01, -0.7];
        let h = hadamard_rank1(&m, &x).unwrap();
        let dm = m.to_dense();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(h.get(i, j), dm[(i, j)] * x[i] * x[j]);
            }
        }
    }

    proptest! {
        #[test]
        fn hadamard_commutes_with_permutation(seed in 0u64..500) {
            use rand::{Rng, SeedableRng, seq::SliceRandom};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = lattice(3, 1.0);
            let m = cov_matrix(&d, &KernelParams::exponential(0.4, 1.0)).unwrap().to_dense();
            let x: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut perm: Vec<usize> = (0..9).collect();
            perm.shuffle(&mut rng);
            let pm = DMatrix::from_fn(9, 9, |i, j| m[(perm[i], perm[j])]);
            let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
            let a = hadamard_rank1(&SymmetricMatrix::Dense(m), &x).unwrap().to_dense();
            let b = hadamard_rank1(&SymmetricMatrix::Dense(pm), &px).unwrap().to_dense();
            for i in 0..9 {
                for j in 0..9 {
                    prop_assert_eq!(b[(i, j)], a[(perm[i], perm[j])]);
                }
            }
        }

        #[test]
        fn tapered_equals_dense_times_taper(side in 2usize..8, range in 0.05f64..2.0, phi in 0.05f64..1.0) {
            let d = lattice(side, 1.0);
            let k = KernelParams::matern(phi, 1.0, 1.0);
            let t = TaperSpec::wendland1(range);
            let s = cov_tapered(&d, &k, &t).unwrap();
            let dense = cov_matrix(&d, &k).unwrap();
            for i in 0..d.len() {
                for j in 0..d.len() {
                    let dist = d.distance(i, j);
                    let want = dense.get(i, j) * t.weight(dist);
                    prop_assert_eq!(s.get(i, j), want);
                    if dist >= range {
                        prop_assert_eq!(s.get(i, j), 0.0);
                    }
                }
            }
        }
    }
}
