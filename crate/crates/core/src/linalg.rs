//! Factorizations used by the likelihoods, the sampler and the predictor.
//!
//! Nothing here forms an explicit inverse: every consumer goes through
//! `log_det` and `solve`.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::covariance::{SparseSymmetric, SymmetricMatrix};
use crate::error::{Error, Result};

/// Relative jitter levels tried in turn when a factorization fails.
pub const JITTER_LEVELS: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub struct DenseFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl DenseFactor {
    /// Cholesky factor, escalating diagonal jitter (relative to `scale`) on failure.
    pub fn new_with_jitter(m: DMatrix<f64>, scale: f64) -> Result<Self> {
        let n = m.nrows();
        for &level in &JITTER_LEVELS {
            let jitter = level * scale;
            let mut a = m.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    a[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(a) {
                let ok = chol.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0);
                if ok {
                    return Ok(DenseFactor { chol, jitter });
                }
            }
        }
        Err(Error::Numerical(format!(
            "{n}x{n} covariance is not positive definite even with jitter {:e}",
            JITTER_LEVELS[JITTER_LEVELS.len() - 1] * scale
        )))
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut v = DVector::from_column_slice(b);
        self.chol.solve_mut(&mut v);
        v.data.into()
    }

    /// `L z` with the lower factor, for sampling.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let l = self.chol.l();
        (l * DVector::from_column_slice(z)).data.into()
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern (new -> old).
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize| -> Vec<Vec<usize>> {
        let mut seen = vec![false; n];
        let mut levels = vec![vec![start]];
        seen[start] = true;
        loop {
            let mut next = Vec::new();
            for &v in levels.last().unwrap() {
                for &w in &adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            levels.push(next);
        }
        levels
    };

    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .unwrap();
        // Walk towards a pseudo-peripheral node.
        let mut start = seed;
        let mut depth = bfs_levels(start).len();
        for _ in 0..4 {
            let levels = bfs_levels(start);
            let candidate = *levels
                .last()
                .unwrap()
                .iter()
                .min_by_key(|&&v| (degree[v], v))
                .unwrap();
            let d = bfs_levels(candidate).len();
            if d > depth {
                depth = d;
                start = candidate;
            } else {
                break;
            }
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor of a sparse symmetric matrix stored on its envelope (skyline).
///
/// Row `i` of `L` occupies columns `first[i]..=i`; fill-in never leaves the
/// envelope of the permuted matrix, so the reordering controls the cost.
pub struct EnvelopeFactor {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
    jitter: f64,
}

impl EnvelopeFactor {
    pub fn new_with_jitter(a: &SparseSymmetric, scale: f64) -> Result<Self> {
        let n = a.dim();
        let adjacency: Vec<Vec<usize>> = a
            .adjacency()
            .into_iter()
            .enumerate()
            .map(|(i, row)| row.into_iter().map(|(j, _)| j).filter(|&j| j != i).collect())
            .collect();
        let perm = reverse_cuthill_mckee(&adjacency);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        // Permuted lower-triangle entries, grouped by new row.
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (p, q) = (iperm[i], iperm[j]);
                let (r, c) = if p >= q { (p, q) } else { (q, p) };
                rows[r].push((c, v));
            }
        }
        let first: Vec<usize> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|e| e.0).min().unwrap_or(i).min(i))
            .collect();
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            start.push(total);
            total += i - first[i] + 1;
        }
        start.push(total);
        let mut base = vec![0.0; total];
        for (i, r) in rows.iter().enumerate() {
            for &(j, v) in r {
                base[start[i] + j - first[i]] += v;
            }
        }

        for &level in &JITTER_LEVELS {
            let jitter = level * scale;
            let mut vals = base.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    vals[start[i] + i - first[i]] += jitter;
                }
            }
            if factor_envelope(&first, &start, &mut vals) {
                return Ok(EnvelopeFactor {
                    n,
                    perm,
                    iperm,
                    first,
                    start,
                    vals,
                    jitter,
                });
            }
        }
        Err(Error::Numerical(format!(
            "sparse {n}x{n} covariance is not positive definite even with jitter"
        )))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Stored entries of the factor (envelope size).
    pub fn envelope_size(&self) -> usize {
        self.vals.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.vals[self.start[i] + i - self.first[i]]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let f = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i] + i - f];
            let s: f64 = row.iter().zip(&x[f..i]).map(|(l, v)| l * v).sum();
            x[i] = (x[i] - s) / self.diag(i);
        }
        for i in (0..n).rev() {
            x[i] /= self.diag(i);
            let f = self.first[i];
            let xi = x[i];
            let row = &self.vals[self.start[i]..self.start[i] + i - f];
            for (v, l) in x[f..i].iter_mut().zip(row) {
                *v -= l * xi;
            }
        }
        (0..n).map(|old| x[self.iperm[old]]).collect()
    }
}

fn factor_envelope(first: &[usize], start: &[usize], vals: &mut [f64]) -> bool {
    let n = first.len();
    for i in 0..n {
        let fi = first[i];
        let si = start[i];
        for j in fi..i {
            let fj = first[j];
            let sj = start[j];
            let k0 = fi.max(fj);
            let mut s = vals[si + j - fi];
            let a = &vals[si + k0 - fi..si + j - fi];
            let b = &vals[sj + k0 - fj..sj + j - fj];
            s -= a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let djj = vals[sj + j - fj];
            vals[si + j - fi] = s / djj;
        }
        let row = &vals[si..si + i - fi];
        let d = vals[si + i - fi] - row.iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        vals[si + i - fi] = d.sqrt();
    }
    true
}

/// Factor of `R ⊗ K + nugget * I` through the eigendecompositions of `R` and `K`.
pub struct KroneckerFactor {
    periods: usize,
    n: usize,
    time_vectors: DMatrix<f64>,
    time_values: DVector<f64>,
    space_vectors: DMatrix<f64>,
    space_values: DVector<f64>,
    nugget: f64,
}

impl KroneckerFactor {
    pub fn new(temporal: DMatrix<f64>, spatial: DMatrix<f64>, nugget: f64) -> Result<Self> {
        if !(nugget > 0.0) {
            return Err(Error::Numerical("Kronecker factor requires a positive nugget".into()));
        }
        let te = SymmetricEigen::new(temporal);
        let se = SymmetricEigen::new(spatial);
        // Round-off can push PSD eigenvalues slightly negative.
        let clamp = |v: DVector<f64>| v.map(|x| x.max(0.0));
        Ok(KroneckerFactor {
            periods: te.eigenvalues.len(),
            n: se.eigenvalues.len(),
            time_vectors: te.eigenvectors,
            time_values: clamp(te.eigenvalues),
            space_vectors: se.eigenvectors,
            space_values: clamp(se.eigenvalues),
            nugget,
        })
    }

    pub fn dim(&self) -> usize {
        self.periods * self.n
    }

    pub fn log_det(&self) -> f64 {
        let mut s = 0.0;
        for &l in self.time_values.iter() {
            for &d in self.space_values.iter() {
                s += (l * d + self.nugget).ln();
            }
        }
        s
    }

    /// Solve with a time-major right-hand side (`b[t * n + i]`).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let bm = DMatrix::from_row_slice(self.periods, self.n, b);
        let mut w = self.time_vectors.transpose() * bm * &self.space_vectors;
        for a in 0..self.periods {
            for c in 0..self.n {
                w[(a, c)] /= self.time_values[a] * self.space_values[c] + self.nugget;
            }
        }
        let x = &self.time_vectors * w * self.space_vectors.transpose();
        x.transpose().as_slice().to_vec()
    }
}

/// Any factorized covariance over time-major observation vectors.
pub enum CovFactor {
    Diagonal(Vec<f64>),
    Dense(DenseFactor),
    Sparse(EnvelopeFactor),
    /// Independent equal-size diagonal blocks (blocks may share a factor).
    Blocks {
        size: usize,
        blocks: Vec<Arc<CovFactor>>,
    },
    Kronecker(KroneckerFactor),
}

impl CovFactor {
    /// Factor an assembled matrix, choosing the dense or envelope path by storage.
    pub fn from_matrix(m: &SymmetricMatrix, scale: f64) -> Result<Self> {
        Ok(match m {
            SymmetricMatrix::Dense(d) => CovFactor::Dense(DenseFactor::new_with_jitter(d.clone(), scale)?),
            SymmetricMatrix::Sparse(s) => CovFactor::Sparse(EnvelopeFactor::new_with_jitter(s, scale)?),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            CovFactor::Diagonal(d) => d.len(),
            CovFactor::Dense(f) => f.dim(),
            CovFactor::Sparse(f) => f.dim(),
            CovFactor::Blocks { size, blocks } => size * blocks.len(),
            CovFactor::Kronecker(f) => f.dim(),
        }
    }

    pub fn log_det(&self) -> f64 {
        match self {
            CovFactor::Diagonal(d) => d.iter().map(|v| v.ln()).sum(),
            CovFactor::Dense(f) => f.log_det(),
            CovFactor::Sparse(f) => f.log_det(),
            CovFactor::Blocks { blocks, .. } => {
                let mut total = 0.0;
                let mut cache: Option<(*const CovFactor, f64)> = None;
                for b in blocks {
                    let ptr = Arc::as_ptr(b);
                    let v = match cache {
                        Some((p, v)) if p == ptr => v,
                        _ => {
                            let v = b.log_det();
                            cache = Some((ptr, v));
                            v
                        }
                    };
                    total += v;
                }
                total
            }
            CovFactor::Kronecker(f) => f.log_det(),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.dim());
        match self {
            CovFactor::Diagonal(d) => b.iter().zip(d).map(|(x, v)| x / v).collect(),
            CovFactor::Dense(f) => f.solve(b),
            CovFactor::Sparse(f) => f.solve(b),
            CovFactor::Blocks { size, blocks } => {
                let mut out = vec![0.0; b.len()];
                for (k, f) in blocks.iter().enumerate() {
                    let seg = &b[k * size..(k + 1) * size];
                    if seg.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    out[k * size..(k + 1) * size].copy_from_slice(&f.solve(seg));
                }
                out
            }
            CovFactor::Kronecker(f) => f.solve(b),
        }
    }

    /// Largest diagonal jitter applied anywhere in the factor.
    pub fn jitter(&self) -> f64 {
        match self {
            CovFactor::Diagonal(_) | CovFactor::Kronecker(_) => 0.0,
            CovFactor::Dense(f) => f.jitter(),
            CovFactor::Sparse(f) => f.jitter(),
            CovFactor::Blocks { blocks, .. } => blocks.iter().map(|b| b.jitter()).fold(0.0, f64::max),
        }
    }
}
