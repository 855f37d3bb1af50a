//! Reconstruction state, observations, candidate pairs and instrumentation
//! records shared by every stage of the pipeline.

use std::cmp::Ordering;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

/// The `N x M` data matrix. Row `i` holds the `M` observations of node `i`;
/// column `m` is one independent sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl SampleMatrix {
    /// Builds a matrix from row-major values. Zero samples are allowed (a
    /// prior-only reconstruction); zero nodes are not.
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSamples("node count must be positive".into()));
        }
        if values.len() != n * m {
            return Err(Error::Shape(format!(
                "expected {} values for {n}x{m} samples, got {}",
                n * m,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSamples(format!(
                "non-finite value at node {}, sample {}",
                pos / m.max(1),
                pos % m.max(1)
            )));
        }
        Ok(Self { n, m, values })
    }

    /// Like [`SampleMatrix::new`] but rejects anything outside `{-1, +1}`.
    pub fn new_spins(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        let s = Self::new(n, m, values)?;
        s.check_spins()?;
        Ok(s)
    }

    pub fn check_spins(&self) -> Result<()> {
        match self.values.iter().position(|&v| v != 1.0 && v != -1.0) {
            None => Ok(()),
            Some(pos) => Err(Error::InvalidSamples(format!(
                "Ising data must be +/-1; node {} sample {} is {}",
                pos / self.m,
                pos % self.m,
                self.values[pos]
            ))),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.values[i * self.m + m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub type EdgeMap = FxHashMap<(usize, usize), f64>;

#[inline]
pub(crate) fn canonical(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Symmetric sparse coupling matrix `W` with node parameters `theta` and the
/// cached neighbor sums `m_i^(m) = sum_j W_ij X_jm`.
///
/// Each unordered pair is stored once under `(min, max)`; zero weights are
/// never stored. The cache has one row of `M` entries per node and is kept in
/// sync with the edge map by [`SparseWeights::set_edge`].
#[derive(Debug, Clone)]
pub struct SparseWeights {
    n: usize,
    m: usize,
    edges: EdgeMap,
    theta: Vec<f64>,
    sums: Vec<f64>,
}

impl SparseWeights {
    /// Empty network with every `theta_i = theta` and no cached sums.
    pub fn new(n: usize, theta: f64) -> Self {
        Self {
            n,
            m: 0,
            edges: EdgeMap::default(),
            theta: vec![theta; n],
            sums: Vec::new(),
        }
    }

    /// Empty network bound to `data` (all sums zero).
    pub fn empty_for(data: &SampleMatrix, theta: f64) -> Self {
        Self {
            n: data.n(),
            m: data.m(),
            edges: EdgeMap::default(),
            theta: vec![theta; data.n()],
            sums: vec![0.0; data.n() * data.m()],
        }
    }

    /// Network from explicit edges and node parameters. Sums are not bound;
    /// call [`SparseWeights::bind`] before handing the state to a model.
    pub fn from_parts(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        theta: Vec<f64>,
    ) -> Result<Self> {
        if theta.len() != n {
            return Err(Error::Shape(format!(
                "theta has {} entries for {n} nodes",
                theta.len()
            )));
        }
        let mut map = EdgeMap::default();
        for (i, j, w) in edges {
            if i == j {
                return Err(Error::DiagonalWrite(i));
            }
            for node in [i, j] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
            if !w.is_finite() {
                return Err(Error::NumericOverflow("edge weight"));
            }
            if w != 0.0 {
                map.insert(canonical(i, j), w);
            } else {
                map.remove(&canonical(i, j));
            }
        }
        Ok(Self {
            n,
            m: 0,
            edges: map,
            theta,
            sums: Vec::new(),
        })
    }

    /// Rebuilds the neighbor-sum cache for `data` from scratch.
    pub fn bind(&mut self, data: &SampleMatrix) -> Result<()> {
        if data.n() != self.n {
            return Err(Error::Shape(format!(
                "samples have {} nodes, state has {}",
                data.n(),
                self.n
            )));
        }
        self.m = data.m();
        self.sums = self.recompute_sums(data);
        Ok(())
    }

    /// Neighbor sums recomputed from the edge map, ignoring the cache.
    pub fn recompute_sums(&self, data: &SampleMatrix) -> Vec<f64> {
        let m = data.m();
        let mut sums = vec![0.0; self.n * m];
        for (&(i, j), &w) in &self.edges {
            let (xi, xj) = (data.row(i), data.row(j));
            for s in 0..m {
                sums[i * m + s] += w * xj[s];
                sums[j * m + s] += w * xi[s];
            }
        }
        sums
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of samples the sum cache is bound to.
    pub fn bound_samples(&self) -> usize {
        self.m
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.edges.get(&canonical(i, j)).copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn theta(&self, i: usize) -> f64 {
        self.theta[i]
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, i: usize, value: f64) {
        self.theta[i] = value;
    }

    #[inline]
    pub fn row_sums(&self, i: usize) -> &[f64] {
        &self.sums[i * self.m..(i + 1) * self.m]
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn edge_map(&self) -> &EdgeMap {
        &self.edges
    }

    /// Edges as `(i, j, w)` with `i < j`, sorted by `(i, j)`.
    pub fn sorted_edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<_> = self.edges.iter().map(|(&(i, j), &w)| (i, j, w)).collect();
        out.sort_unstable_by_key(|&(i, j, _)| (i, j));
        out
    }

    pub fn check_node(&self, node: usize) -> Result<()> {
        if node < self.n {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange { node, n: self.n })
        }
    }

    pub(crate) fn check_data(&self, data: &SampleMatrix) -> Result<()> {
        if data.n() != self.n || data.m() != self.m {
            return Err(Error::Shape(format!(
                "state is bound to {}x{} samples, got {}x{}",
                self.n,
                self.m,
                data.n(),
                data.m()
            )));
        }
        Ok(())
    }

    /// Sets `W_ij = w` and shifts the cached sums of rows `i` and `j` by
    /// `(w - w_old) * X`. Writing zero removes the entry. Returns `w_old`.
    pub fn set_edge(&mut self, i: usize, j: usize, w: f64, data: &SampleMatrix) -> Result<f64> {
        if i == j {
            return Err(Error::DiagonalWrite(i));
        }
        self.check_node(i)?;
        self.check_node(j)?;
        self.check_data(data)?;
        if !w.is_finite() {
            return Err(Error::NumericOverflow("edge weight"));
        }
        let key = canonical(i, j);
        let old = self.edges.get(&key).copied().unwrap_or(0.0);
        if w == old {
            return Ok(old);
        }
        if w == 0.0 {
            self.edges.remove(&key);
        } else {
            self.edges.insert(key, w);
        }
        let delta = w - old;
        let m = self.m;
        shift_row(&mut self.sums[i * m..(i + 1) * m], delta, data.row(j));
        shift_row(&mut self.sums[j * m..(j + 1) * m], delta, data.row(i));
        Ok(old)
    }

    /// Split borrows for the parallel edge-update phase.
    pub(crate) fn parts_mut(&mut self) -> (&mut EdgeMap, &mut [f64], &[f64], usize) {
        (&mut self.edges, &mut self.sums, &self.theta, self.m)
    }
}

#[inline]
pub(crate) fn shift_row(row: &mut [f64], delta: f64, x: &[f64]) {
    for (s, &v) in row.iter_mut().zip(x) {
        *s += delta * v;
    }
}

/// An unordered candidate pair `(i, j)`, `i < j`, with its search distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEdge {
    pub i: usize,
    pub j: usize,
    pub dist: f64,
}

impl CandidateEdge {
    /// Canonicalizes the pair. Panics in debug builds on `a == b`.
    pub fn new(a: usize, b: usize, dist: f64) -> Self {
        debug_assert_ne!(a, b, "candidate pair must join two distinct nodes");
        let (i, j) = canonical(a, b);
        Self { i, j, dist }
    }

    /// Total order on `(dist, i, j)`; the ranking used everywhere.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.i.cmp(&other.i))
            .then(self.j.cmp(&other.j))
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.i, self.j)
    }
}

/// One level of the closest-pairs recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecursionLevel {
    pub t: usize,
    /// Number of nodes searched at this level (`N_t`).
    pub size: usize,
    /// Neighbors per node requested from the KNN search (`k_t`).
    pub k: usize,
    pub exhaustive: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecursionTrace {
    pub levels: Vec<RecursionLevel>,
}

impl RecursionTrace {
    /// `N_{t+1} <= N_t / 2` for every consecutive pair of levels.
    pub fn halving_holds(&self) -> bool {
        self.levels
            .windows(2)
            .all(|w| 2 * w[1].size <= w[0].size)
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Number of consecutive level pairs, i.e. the checks `halving_holds`
    /// performs.
    pub fn transitions(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }
}

/// One iteration (GCD) or sweep (CD) of a reconstruction driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Sum of `|W'_ij - W_ij|` over the updated pairs.
    pub delta: f64,
    /// Wall-clock seconds since the driver started, excluding objective
    /// bookkeeping.
    pub seconds: f64,
    pub candidates: usize,
    /// Log-posterior after the iteration, when recording was requested.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub iterations: Vec<IterationRecord>,
}

impl ConvergenceTrace {
    /// Number of iterations executed (tau on convergence).
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    /// Earliest wall-clock time at which the recorded objective reached
    /// `target`.
    pub fn time_to_reach(&self, target: f64) -> Option<f64> {
        self.iterations
            .iter()
            .find(|r| r.objective.is_some_and(|o| o >= target))
            .map(|r| r.seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_data(n: usize, m: usize, seed: u64) -> SampleMatrix {
        let mut rng = rng_from(seed);
        let values = (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect();
        SampleMatrix::new(n, m, values).unwrap()
    }

    #[test]
    fn zero_write_on_empty_state_is_a_noop() {
        let data = random_data(4, 5, 1);
        let mut st = SparseWeights::empty_for(&data, 0.0);
        st.set_edge(1, 2, 0.0, &data).unwrap();
        assert_eq!(st.edge_count(), 0);
        assert!(st.sums().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn set_then_clear_restores_sums() {
        let data = random_data(4, 7, 2);
        let mut st = SparseWeights::empty_for(&data, 0.0);
        st.set_edge(1, 2, 1.0, &data).unwrap();
        assert_eq!(st.edge_count(), 1);
        st.set_edge(2, 1, 0.0, &data).unwrap();
        assert_eq!(st.edge_count(), 0);
        for &s in st.sums() {
            assert!(s.abs() <= 1e-12);
        }
    }

    #[test]
    fn incremental_sums_match_naive_recomputation() {
        let (n, m) = (10, 13);
        let data = random_data(n, m, 3);
        let mut st = SparseWeights::empty_for(&data, 0.0);
        let mut rng = rng_from(4);
        for _ in 0..100 {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let w = if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(-3.0..3.0)
            };
            st.set_edge(i, j, w, &data).unwrap();
        }
        // naive sum_j W_ij X_jm over the dense matrix
        for i in 0..n {
            for s in 0..m {
                let naive: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| st.weight(i, j) * data.get(j, s))
                    .sum();
                let cached = st.row_sums(i)[s];
                assert!(
                    (naive - cached).abs() <= 1e-9 * naive.abs().max(1.0),
                    "node {i} sample {s}: {naive} vs {cached}"
                );
            }
        }
        let nonzero = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| st.weight(i, j) != 0.0)
            .count();
        assert_eq!(nonzero, st.edge_count());
    }

    #[test]
    fn diagonal_and_shape_errors() {
        let data = random_data(3, 2, 5);
        let mut st = SparseWeights::empty_for(&data, 0.0);
        assert!(matches!(
            st.set_edge(1, 1, 1.0, &data),
            Err(Error::DiagonalWrite(1))
        ));
        let other = random_data(3, 3, 6);
        assert!(matches!(
            st.set_edge(0, 1, 1.0, &other),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            st.set_edge(0, 5, 1.0, &data),
            Err(Error::NodeOutOfRange { node: 5, n: 3 })
        ));
    }

    #[test]
    fn spin_validation() {
        assert!(SampleMatrix::new_spins(2, 2, vec![1.0, -1.0, -1.0, 1.0]).is_ok());
        assert!(SampleMatrix::new_spins(2, 2, vec![1.0, 0.0, -1.0, 1.0]).is_err());
        assert!(SampleMatrix::new(0, 2, vec![]).is_err());
        assert!(SampleMatrix::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn candidate_ordering_breaks_ties_by_pair() {
        let a = CandidateEdge::new(5, 2, 1.0);
        assert_eq!(a.pair(), (2, 5));
        let b = CandidateEdge::new(1, 9, 1.0);
        let c = CandidateEdge::new(0, 1, 0.5);
        let mut v = vec![a, b, c];
        v.sort_by(|x, y| x.rank_cmp(y));
        assert_eq!(
            v.iter().map(|e| e.pair()).collect::<Vec<_>>(),
            vec![(0, 1), (1, 9), (2, 5)]
        );
    }

    #[test]
    fn halving_check() {
        let lvl = |t, size| RecursionLevel {
            t,
            size,
            k: 1,
            exhaustive: false,
        };
        let ok = RecursionTrace {
            levels: vec![lvl(0, 100), lvl(1, 50), lvl(2, 20)],
        };
        assert!(ok.halving_holds());
        let bad = RecursionTrace {
            levels: vec![lvl(0, 100), lvl(1, 51)],
        };
        assert!(!bad.halving_holds());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cache_tracks_edge_map(ops in proptest::collection::vec((0usize..6, 0usize..6, -2.0f64..2.0, any::<bool>()), 1..60)) {
                let data = random_data(6, 4, 11);
                let mut st = SparseWeights::empty_for(&data, 0.0);
                for (i, j, w, zero) in ops {
                    if i == j { continue; }
                    st.set_edge(i, j, if zero { 0.0 } else { w }, &data).unwrap();
                }
                let fresh = st.recompute_sums(&data);
                for (a, b) in fresh.iter().zip(st.sums()) {
                    prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
                }
                prop_assert!(st.edge_map().values().all(|&w| w != 0.0));
                prop_assert!(st.edge_map().keys().all(|&(i, j)| i < j));
            }
        }
    }
}
