//! The `m` closest pairs under an arbitrary distance oracle.
//!
//! Each level asks for `k = ceil(4m/|S|)` nearest neighbors per node, keeps
//! the `2m` best directed edges, and recurses on the nodes whose whole
//! neighbor list made that cut. Those are the only nodes that can still hide
//! unseen pairs better than the cut. Small sets are scanned exhaustively.

use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::nndescent::{find_knn, KnnParams, PairDistance};
use crate::types::{CandidateEdge, RecursionLevel, RecursionTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FindBestOptions {
    /// Convergence threshold handed to every KNN search.
    pub eps: f64,
    pub max_sweeps: usize,
    /// Undirected adjacency cap as a multiple of `k`.
    pub cap_factor: usize,
}

impl Default for FindBestOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_sweeps: 100,
            cap_factor: 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BestPairsResult {
    /// Ascending by `(dist, i, j)`, canonical and distinct.
    pub pairs: Vec<CandidateEdge>,
    pub trace: RecursionTrace,
    /// Fewer than `m` pairs exist among the nodes.
    pub short: bool,
    /// `|D|` at each non-exhaustive level.
    pub undirected_cut: Vec<usize>,
    /// KNN sweeps at each non-exhaustive level.
    pub sweeps: Vec<usize>,
}

fn check_input(m: usize, nodes: &[usize]) -> Result<()> {
    if m == 0 {
        return Err(Error::parameter("m must be at least 1"));
    }
    if nodes.len() < 2 {
        return Err(Error::parameter("need at least two nodes"));
    }
    let mut seen = FxHashSet::default();
    if !nodes.iter().all(|v| seen.insert(*v)) {
        return Err(Error::parameter("node set contains duplicates"));
    }
    Ok(())
}

#[inline]
fn probe<D: PairDistance + ?Sized>(d: &D, a: usize, b: usize) -> Result<CandidateEdge> {
    let e = CandidateEdge::new(a, b, 0.0);
    let dist = d.distance(e.i, e.j);
    if dist.is_finite() {
        Ok(CandidateEdge { dist, ..e })
    } else {
        Err(Error::NonFiniteDistance { i: e.i, j: e.j })
    }
}

fn smallest(mut all: Vec<CandidateEdge>, m: usize) -> Vec<CandidateEdge> {
    if m < all.len() {
        all.select_nth_unstable_by(m - 1, CandidateEdge::rank_cmp);
        all.truncate(m);
    }
    all.sort_unstable_by(CandidateEdge::rank_cmp);
    all
}

fn scan_all<D: PairDistance + ?Sized>(m: usize, nodes: &[usize], d: &D) -> Result<Vec<CandidateEdge>> {
    let all = (0..nodes.len())
        .into_par_iter()
        .map(|a| {
            (a + 1..nodes.len())
                .map(|b| probe(d, nodes[a], nodes[b]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(smallest(all, m))
}

/// The exact `m` best pairs by probing all `|S|(|S|-1)/2` of them.
pub fn find_best_exhaustive<D: PairDistance + ?Sized>(
    m: usize,
    nodes: &[usize],
    d: &D,
) -> Result<BestPairsResult> {
    check_input(m, nodes)?;
    let s = nodes.len();
    let pairs = scan_all(m, nodes, d)?;
    Ok(BestPairsResult {
        short: pairs.len() < m,
        pairs,
        trace: RecursionTrace {
            levels: vec![RecursionLevel {
                t: 0,
                size: s,
                k: s - 1,
                exhaustive: true,
            }],
        },
        ..Default::default()
    })
}

/// Approximate `m` best pairs among `nodes`.
pub fn find_best<D: PairDistance + ?Sized, R: Rng + ?Sized>(
    m: usize,
    nodes: &[usize],
    d: &D,
    rng: &mut R,
    opts: &FindBestOptions,
) -> Result<BestPairsResult> {
    check_input(m, nodes)?;
    let mut out = BestPairsResult::default();
    let mut found: Vec<CandidateEdge> = Vec::new();
    let mut current = nodes.to_vec();
    let mut t = 0;
    while current.len() >= 2 {
        let s = current.len();
        if s.saturating_mul(s) <= 4 * m {
            found.extend(scan_all(m, &current, d)?);
            out.trace.levels.push(RecursionLevel {
                t,
                size: s,
                k: s - 1,
                exhaustive: true,
            });
            break;
        }
        let k = (4 * m).div_ceil(s);
        let params = KnnParams {
            k,
            eps: opts.eps,
            max_sweeps: opts.max_sweeps,
            neighbor_cap: Some(k * opts.cap_factor.max(1)),
        };
        let knn = find_knn(params, &current, d, rng)?;
        out.sweeps.push(knn.sweeps);
        let k = knn.graph.k();
        out.trace.levels.push(RecursionLevel {
            t,
            size: s,
            k,
            exhaustive: false,
        });

        // 2m best directed edges, ranked as (dist, from, to)
        let mut directed: Vec<(usize, usize, f64)> = (0..s)
            .flat_map(|a| {
                knn.graph
                    .neighbors(a)
                    .into_iter()
                    .map(move |(v, dist)| (a, v, dist))
            })
            .collect();
        let keep = (2 * m).min(directed.len());
        let key = |x: &(usize, usize, f64), y: &(usize, usize, f64)| {
            x.2.total_cmp(&y.2)
                .then(current[x.0].cmp(&current[y.0]))
                .then(x.1.cmp(&y.1))
        };
        if keep < directed.len() {
            directed.select_nth_unstable_by(keep - 1, key);
            directed.truncate(keep);
        }

        // A node is saturated when all k of its out-edges are in the cut.
        let mut in_cut = vec![0usize; s];
        let mut cut = FxHashSet::default();
        for &(a, v, dist) in &directed {
            in_cut[a] += 1;
            let e = CandidateEdge::new(current[a], v, dist);
            if cut.insert(e.pair()) {
                found.push(e);
            }
        }
        out.undirected_cut.push(cut.len());
        debug_assert!(cut.len() <= 2 * m && (cut.len() >= m || keep < 2 * m));

        current = (0..s)
            .filter(|&a| in_cut[a] == k)
            .map(|a| current[a])
            .collect();
        t += 1;
    }

    found.sort_unstable_by(CandidateEdge::rank_cmp);
    let mut seen = FxHashSet::default();
    found.retain(|e| seen.insert(e.pair()));
    found.truncate(m);
    let total = nodes.len() * (nodes.len() - 1) / 2;
    out.short = m > total;
    out.pairs = found;
    Ok(out)
}

/// Entry `r` is the overlap of the top `r + 1` pairs of both lists divided
/// by `r + 1`.
pub fn recall_curve(exact: &[CandidateEdge], approx: &[CandidateEdge]) -> Result<Vec<f64>> {
    if exact.len() != approx.len() {
        return Err(Error::parameter(format!(
            "recall needs equal lengths, got {} and {}",
            exact.len(),
            approx.len()
        )));
    }
    let mut seen_exact = FxHashSet::default();
    let mut seen_approx = FxHashSet::default();
    let mut hits = 0usize;
    let mut curve = Vec::with_capacity(exact.len());
    for (r, (e, a)) in exact.iter().zip(approx).enumerate() {
        seen_exact.insert(e.pair());
        if seen_approx.contains(&e.pair()) {
            hits += 1;
        }
        seen_approx.insert(a.pair());
        if seen_exact.contains(&a.pair()) {
            hits += 1;
        }
        curve.push(hits as f64 / (r + 1) as f64);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn points(n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect()
    }

    fn euclid(p: &[(f64, f64)]) -> impl Fn(usize, usize) -> f64 + Sync + '_ {
        move |i, j| ((p[i].0 - p[j].0).powi(2) + (p[i].1 - p[j].1).powi(2)).sqrt()
    }

    fn e(i: usize, j: usize) -> CandidateEdge {
        CandidateEdge::new(i, j, 0.0)
    }

    #[test]
    fn base_case_is_exhaustive() {
        let p = points(10, 1);
        let d = euclid(&p);
        let nodes: Vec<usize> = (0..10).collect();
        let a = find_best(25, &nodes, &d, &mut rng_from(0), &Default::default()).unwrap();
        let b = find_best_exhaustive(25, &nodes, &d).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert!(a.trace.levels[0].exhaustive);
        assert_eq!(a.trace.depth(), 1);
    }

    #[test]
    fn all_pairs_requested() {
        let p = points(9, 2);
        let d = euclid(&p);
        let nodes: Vec<usize> = (0..9).collect();
        let r = find_best_exhaustive(36, &nodes, &d).unwrap();
        assert_eq!(r.pairs.len(), 36);
        assert!(!r.short);
        assert!(r.pairs.windows(2).all(|w| w[0].rank_cmp(&w[1]).is_lt()));
        let r = find_best(50, &nodes, &d, &mut rng_from(0), &Default::default()).unwrap();
        assert!(r.short);
        assert_eq!(r.pairs.len(), 36);
    }

    #[test]
    fn recursion_invariants_hold() {
        for seed in 0..5 {
            let p = points(600, seed);
            let d = euclid(&p);
            let nodes: Vec<usize> = (0..600).collect();
            let m = 600;
            let r = find_best(m, &nodes, &d, &mut rng_from(seed), &Default::default()).unwrap();
            assert!(r.trace.halving_holds(), "{:?}", r.trace);
            assert!(r.trace.depth() <= (600f64).log2().ceil() as usize);
            for &c in &r.undirected_cut {
                assert!(m <= c && c <= 2 * m);
            }
            assert_eq!(r.pairs.len(), m);
            let mut pairs: Vec<_> = r.pairs.iter().map(|e| e.pair()).collect();
            pairs.sort_unstable();
            pairs.dedup();
            assert_eq!(pairs.len(), m);
            for c in &r.pairs {
                assert!(c.i < c.j);
                assert_eq!(c.dist, d(c.i, c.j));
            }
        }
    }

    #[test]
    fn good_recall_on_planar_points() {
        let p = points(500, 7);
        let d = euclid(&p);
        let nodes: Vec<usize> = (0..500).collect();
        let approx = find_best(500, &nodes, &d, &mut rng_from(3), &Default::default()).unwrap();
        let exact = find_best_exhaustive(500, &nodes, &d).unwrap();
        let curve = recall_curve(&exact.pairs, &approx.pairs).unwrap();
        assert_eq!(curve[0], 1.0);
        assert!(curve[499] > 0.9, "final recall {}", curve[499]);
    }

    #[test]
    fn same_seed_same_result() {
        let p = points(300, 8);
        let d = euclid(&p);
        let nodes: Vec<usize> = (0..300).collect();
        let a = find_best(200, &nodes, &d, &mut rng_from(5), &Default::default()).unwrap();
        let b = find_best(200, &nodes, &d, &mut rng_from(5), &Default::default()).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn duplicate_directions_collapse() {
        // two clusters of two points: both directions of each close pair are
        // among the best directed edges
        let p = vec![(0.0, 0.0), (0.01, 0.0), (5.0, 5.0), (5.0, 5.02), (9.0, 0.0), (0.0, 9.0)];
        let d = euclid(&p);
        let nodes: Vec<usize> = (0..6).collect();
        let r = find_best(2, &nodes, &d, &mut rng_from(1), &Default::default()).unwrap();
        assert_eq!(r.pairs.iter().map(|e| e.pair()).collect::<Vec<_>>(), vec![(0, 1), (2, 3)]);
        // 2m = 4 directed edges collapse to fewer undirected pairs
        assert!(r.undirected_cut[0] < 4 && r.undirected_cut[0] >= 2);
    }

    #[test]
    fn recall_curve_examples() {
        let (a, b, c) = (e(0, 1), e(0, 2), e(1, 2));
        assert_eq!(recall_curve(&[a, b, c], &[a, b, c]).unwrap(), vec![1.0; 3]);
        assert_eq!(recall_curve(&[a, b], &[c, e(3, 4)]).unwrap(), vec![0.0; 2]);
        assert_eq!(
            recall_curve(&[a, b, c], &[a, c, b]).unwrap(),
            vec![1.0, 0.5, 1.0]
        );
        assert!(recall_curve(&[a], &[a, b]).is_err());
    }

    #[test]
    fn input_validation() {
        let d = |i: usize, j: usize| (i as f64 - j as f64).abs();
        assert!(find_best(0, &[0, 1, 2], &d, &mut rng_from(0), &Default::default()).is_err());
        assert!(find_best(1, &[0], &d, &mut rng_from(0), &Default::default()).is_err());
        assert!(find_best_exhaustive(1, &[0, 0], &d).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]
            #[test]
            fn base_case_matches_exhaustive(n in 2usize..30, extra in 0usize..50, seed in any::<u64>()) {
                let m = (n * n).div_ceil(4) + extra;
                let p = points(n, seed);
                let d = euclid(&p);
                let nodes: Vec<usize> = (0..n).collect();
                let a = find_best(m, &nodes, &d, &mut rng_from(seed), &Default::default()).unwrap();
                let b = find_best_exhaustive(m, &nodes, &d).unwrap();
                prop_assert_eq!(a.pairs.len(), b.pairs.len());
                for (x, y) in a.pairs.iter().zip(&b.pairs) {
                    prop_assert_eq!((x.i, x.j, x.dist.to_bits()), (y.i, y.j, y.dist.to_bits()));
                }
            }

            #[test]
            fn output_is_sorted_distinct_and_probed(n in 30usize..120, m in 1usize..80, seed in any::<u64>()) {
                let p = points(n, seed);
                let d = euclid(&p);
                let nodes: Vec<usize> = (0..n).collect();
                let r = find_best(m, &nodes, &d, &mut rng_from(seed), &Default::default()).unwrap();
                prop_assert!(r.trace.halving_holds());
                prop_assert_eq!(r.pairs.len(), m.min(n * (n - 1) / 2));
                prop_assert!(r.pairs.windows(2).all(|w| w[0].rank_cmp(&w[1]).is_lt()));
                for c in &r.pairs {
                    prop_assert_eq!(c.dist, d(c.i, c.j));
                }
            }
        }
    }
}
