//! Approximate k-nearest-neighbor digraphs by neighbor-of-neighbor descent.
//!
//! The distance oracle need not be a metric. Every sweep reads a frozen
//! snapshot of the graph and its undirected view, so the per-node scans are
//! independent and run in parallel without synchronization.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Symmetric candidate score; smaller is better.
pub trait PairDistance: Sync {
    fn distance(&self, i: usize, j: usize) -> f64;
}

impl<F: Fn(usize, usize) -> f64 + Sync> PairDistance for F {
    #[inline]
    fn distance(&self, i: usize, j: usize) -> f64 {
        self(i, j)
    }
}

/// Heap entry; ordered by `(dist, id)` so the heap top is the worst neighbor.
#[derive(Debug, Clone, Copy)]
struct Entry {
    dist: f64,
    id: usize,
}

impl Entry {
    #[inline]
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    pub k: usize,
    /// Stop once a sweep changes fewer than `eps * k * |V|` out-list entries.
    pub eps: f64,
    pub max_sweeps: usize,
    /// Reverse neighbors kept per node in the undirected view, nearest
    /// first; `None` means `k`.
    pub neighbor_cap: Option<usize>,
}

impl KnnParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            eps: 1e-3,
            max_sweeps: 100,
            neighbor_cap: None,
        }
    }

    pub fn eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn max_sweeps(mut self, n: usize) -> Self {
        self.max_sweeps = n;
        self
    }

    pub fn neighbor_cap(mut self, cap: usize) -> Self {
        self.neighbor_cap = Some(cap);
        self
    }
}

/// Directed graph with exactly `k` out-neighbors per node. Node ids in the
/// public API are the caller's ids; storage is indexed by position in
/// [`KnnGraph::nodes`].
#[derive(Debug, Clone)]
pub struct KnnGraph {
    nodes: Vec<usize>,
    k: usize,
    out: Vec<BinaryHeap<Entry>>,
}

impl KnnGraph {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Out-neighbors of the node at `pos`, best first, as `(node, dist)`.
    pub fn neighbors(&self, pos: usize) -> Vec<(usize, f64)> {
        let mut v: Vec<Entry> = self.out[pos].iter().copied().collect();
        v.sort_unstable();
        v.into_iter().map(|e| (self.nodes[e.id], e.dist)).collect()
    }

    /// Worst stored out-neighbor of the node at `pos`.
    pub fn worst(&self, pos: usize) -> Option<(usize, f64)> {
        self.out[pos].peek().map(|e| (self.nodes[e.id], e.dist))
    }

    /// Every directed edge as `(from, to, dist)` in caller ids.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.out.iter().enumerate().flat_map(move |(a, heap)| {
            heap.iter()
                .map(move |e| (self.nodes[a], self.nodes[e.id], e.dist))
        })
    }

    /// Checks the structural contract: `k` distinct out-neighbors per node,
    /// none of them the node itself.
    pub fn is_well_formed(&self) -> bool {
        self.out.iter().enumerate().all(|(a, heap)| {
            let mut ids: Vec<usize> = heap.iter().map(|e| e.id).collect();
            ids.sort_unstable();
            ids.dedup();
            heap.len() == self.k && ids.len() == self.k && !ids.contains(&a)
        })
    }
}

#[derive(Debug, Clone)]
pub struct KnnResult {
    pub graph: KnnGraph,
    /// Full sweeps executed; 0 on the exhaustive path.
    pub sweeps: usize,
    /// Out-list entries changed per sweep, at most `k |V|`.
    pub deltas: Vec<usize>,
    /// Oracle calls made (cache hits included).
    pub evaluations: u64,
    /// False when `max_sweeps` stopped the descent.
    pub converged: bool,
    pub exhaustive: bool,
}

#[inline]
fn checked<D: PairDistance + ?Sized>(d: &D, i: usize, j: usize) -> Result<f64> {
    let v = d.distance(i, j);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteDistance { i, j })
    }
}

fn validate(nodes: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::parameter("k must be at least 1"));
    }
    if nodes.len() < 2 {
        return Err(Error::parameter("need at least two nodes"));
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::parameter("node set contains duplicates"));
    }
    Ok(())
}

/// Exact k-NN digraph by probing every ordered pair. `k` is clamped to
/// `|nodes| - 1`.
pub fn exhaustive_knn<D: PairDistance + ?Sized>(
    k: usize,
    nodes: &[usize],
    d: &D,
) -> Result<KnnGraph> {
    validate(nodes, k)?;
    let n = nodes.len();
    let k = k.min(n - 1);
    let out = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut all = Vec::with_capacity(n - 1);
            for b in (0..n).filter(|&b| b != a) {
                all.push(Entry {
                    dist: checked(d, nodes[a], nodes[b])?,
                    id: b,
                });
            }
            if k < all.len() {
                all.select_nth_unstable(k - 1);
                all.truncate(k);
            }
            Ok(all.into_iter().collect::<BinaryHeap<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KnnGraph {
        nodes: nodes.to_vec(),
        k,
        out,
    })
}

/// Approximate k-NN digraph over `nodes`. Falls back to [`exhaustive_knn`]
/// when `k >= |nodes| - 1`.
pub fn find_knn<D: PairDistance + ?Sized, R: Rng + ?Sized>(
    params: KnnParams,
    nodes: &[usize],
    d: &D,
    rng: &mut R,
) -> Result<KnnResult> {
    validate(nodes, params.k)?;
    if !(params.eps > 0.0) {
        return Err(Error::parameter(format!(
            "eps must be positive, got {}",
            params.eps
        )));
    }
    let n = nodes.len();
    if u32::try_from(n).is_err() {
        return Err(Error::parameter(format!("{n} nodes exceed the supported count")));
    }
    let k = params.k;
    if k >= n - 1 {
        let graph = exhaustive_knn(k, nodes, d)?;
        let evaluations = (n * (n - 1)) as u64;
        return Ok(KnnResult {
            graph,
            sweeps: 0,
            deltas: Vec::new(),
            evaluations,
            converged: true,
            exhaustive: true,
        });
    }
    let cap = params.neighbor_cap.unwrap_or(k).max(1);

    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        for idx in sample(rng, n - 1, k) {
            let b = if idx >= a { idx + 1 } else { idx };
            heap.push(Entry {
                dist: checked(d, nodes[a], nodes[b])?,
                id: b,
            });
        }
        out.push(heap);
    }
    let mut evaluations = (n * k) as u64;

    let mut deltas = Vec::new();
    let mut converged = false;
    let threshold = params.eps * (k * n) as f64;
    // id-sorted copy of the previous sweep's view; empty before the first
    let mut previous = Rows::empty(n, k + cap);
    while deltas.len() < params.max_sweeps {
        let undirected = undirected_view(&out, cap);
        let results = (0..n)
            .into_par_iter()
            .map_init(Vec::new, |buf, a| {
                scan_node(a, &out[a], &undirected, &previous, nodes, d, buf)
            })
            .collect::<Result<Vec<_>>>()?;
        previous = undirected;
        previous.sort_rows();
        let mut delta = 0;
        let mut next = Vec::with_capacity(n);
        for (heap, replaced, evals) in results {
            delta += replaced;
            evaluations += evals;
            next.push(heap);
        }
        out = next;
        deltas.push(delta);
        if (delta as f64) < threshold {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "nearest-neighbor descent stopped after {} sweeps without converging",
            deltas.len()
        );
    }
    Ok(KnnResult {
        graph: KnnGraph {
            nodes: nodes.to_vec(),
            k,
            out,
        },
        sweeps: deltas.len(),
        deltas,
        evaluations,
        converged,
        exhaustive: false,
    })
}

/// Per-node id lists stored in fixed-width rows of one buffer.
struct Rows {
    width: usize,
    ids: Vec<u32>,
    len: Vec<u32>,
}

impl Rows {
    fn empty(n: usize, width: usize) -> Self {
        Self {
            width,
            ids: vec![0; n * width],
            len: vec![0; n],
        }
    }

    #[inline]
    fn get(&self, j: usize) -> &[u32] {
        let s = j * self.width;
        &self.ids[s..s + self.len[j] as usize]
    }

    fn sort_rows(&mut self) {
        self.ids
            .par_chunks_mut(self.width)
            .zip(self.len.par_iter())
            .for_each(|(row, &l)| row[..l as usize].sort_unstable());
    }
}

/// Undirected adjacency of the snapshot: each node's own out-neighbors,
/// followed by at most `cap` of the nodes pointing at it, nearest first by
/// `(dist, id)`. Lists therefore stay below `k + cap` entries however many
/// nodes share a popular neighbor.
fn undirected_view(out: &[BinaryHeap<Entry>], cap: usize) -> Rows {
    let n = out.len();
    let k = out.first().map_or(0, BinaryHeap::len);
    // reverse edges grouped by target
    let mut start = vec![0usize; n + 1];
    for heap in out {
        for e in heap {
            start[e.id + 1] += 1;
        }
    }
    for j in 0..n {
        start[j + 1] += start[j];
    }
    let mut fill = start[..n].to_vec();
    let mut rev = vec![Entry { dist: 0.0, id: 0 }; start[n]];
    for (a, heap) in out.iter().enumerate() {
        for e in heap {
            rev[fill[e.id]] = Entry { dist: e.dist, id: a };
            fill[e.id] += 1;
        }
    }
    let mut groups = Vec::with_capacity(n);
    let mut rest = rev.as_mut_slice();
    for j in 0..n {
        let (g, r) = rest.split_at_mut(start[j + 1] - start[j]);
        groups.push(g);
        rest = r;
    }
    let mut rows = Rows::empty(n, k + cap);
    rows.ids
        .par_chunks_mut(k + cap)
        .zip(rows.len.par_iter_mut())
        .zip(groups.into_par_iter())
        .enumerate()
        .for_each(|(j, ((row, len), rev))| {
            let mut l = 0;
            for e in &out[j] {
                row[l] = e.id as u32;
                l += 1;
            }
            let own = l;
            rev.sort_unstable();
            for e in rev.iter() {
                if l - own == cap {
                    break;
                }
                if !row[..own].contains(&(e.id as u32)) {
                    row[l] = e.id as u32;
                    l += 1;
                }
            }
            *len = l as u32;
        });
    rows
}

/// Scans the second neighbors of `a`. A path `a - j - v` whose two edges
/// were both in the previous view was already offered to `a` last sweep and
/// rejected (the worst out-distance only decreases), so it is skipped; the
/// result is the same as a full scan.
fn scan_node<D: PairDistance + ?Sized>(
    a: usize,
    current: &BinaryHeap<Entry>,
    undirected: &Rows,
    previous: &Rows,
    nodes: &[usize],
    d: &D,
    candidates: &mut Vec<u32>,
) -> Result<(BinaryHeap<Entry>, usize, u64)> {
    let mut heap = current.clone();
    let was = |x: usize, y: u32| previous.get(x).binary_search(&y).is_ok();
    candidates.clear();
    for &j in undirected.get(a) {
        let old_aj = was(a, j);
        let j = j as usize;
        candidates.extend(
            undirected
                .get(j)
                .iter()
                .copied()
                .filter(|&v| v as usize != a && !(old_aj && was(j, v))),
        );
    }
    candidates.sort_unstable();
    candidates.dedup();
    let (mut replaced, mut evals) = (0, 0);
    for &v in candidates.iter() {
        let v = v as usize;
        if heap.iter().any(|e| e.id == v) {
            continue;
        }
        let cand = Entry {
            dist: checked(d, nodes[a], nodes[v])?,
            id: v,
        };
        evals += 1;
        let mut worst = heap.peek_mut().expect("k >= 1");
        if cand < *worst {
            *worst = cand;
        }
    }
    // Net change of the out-list: entries present now that were not at the
    // start of the sweep. A neighbor that enters and leaves again within the
    // scan does not count, so a sweep changes at most k entries per node.
    for e in heap.iter() {
        if !current.iter().any(|c| c.id == e.id) {
            replaced += 1;
        }
    }
    Ok((heap, replaced, evals))
}

/// Fraction of exact k-NN out-edges recovered by `approx`, averaged over
/// nodes. Both graphs must cover the same node list.
pub fn knn_recall(approx: &KnnGraph, exact: &KnnGraph) -> Result<f64> {
    if approx.nodes != exact.nodes || approx.k != exact.k {
        return Err(Error::parameter("graphs cover different nodes or k"));
    }
    let mut hit = 0usize;
    for (a, b) in approx.out.iter().zip(&exact.out) {
        hit += a.iter().filter(|e| b.iter().any(|f| f.id == e.id)).count();
    }
    Ok(hit as f64 / (approx.k * approx.len()) as f64)
}
