//! Desk-scale experiment harness: candidate-search scaling, recall against
//! the exhaustive oracle, convergence traces, and support metrics.
//!
//! Every report writes as a tab-separated table preceded by one
//! `# config: ...` line.

use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::findbest::{find_best, find_best_exhaustive, recall_curve, FindBestOptions};
use crate::gcd::{reconstruct_cd, reconstruct_gcd, CdConfig, Reconstruction, ReconstructionConfig};
use crate::models::{DistanceCache, DistanceMode, Model};
use crate::rng::child_rng;
use crate::synth::fig2_instance;
use crate::types::{RecursionTrace, SampleMatrix, SparseWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    pub kappa: f64,
    pub seed: u64,
    pub seconds: f64,
    pub distance_evals: u64,
    pub trace: RecursionTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub ns: Vec<usize>,
    pub kappas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Samples per instance.
    pub m: usize,
    pub lambda: f64,
    pub distance: DistanceMode,
    pub search: FindBestOptions,
    /// Memoize distances within each search. Off by default: with few
    /// samples a distance costs less than a lookup in a table of millions
    /// of pairs.
    pub memoize: bool,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            ns: (10..=15).map(|p| 1usize << p).collect(),
            kappas: vec![1.0],
            seeds: (0..10).collect(),
            m: 10,
            lambda: 0.0,
            distance: DistanceMode::Exact,
            search: FindBestOptions::default(),
            memoize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub config: ScalingConfig,
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    /// Mean seconds per `N` for one `kappa`, ascending in `N`.
    pub fn mean_seconds(&self, kappa: f64) -> Vec<(usize, f64)> {
        let mut ns: Vec<usize> = self.rows.iter().filter(|r| r.kappa == kappa).map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns.into_iter()
            .map(|n| {
                let secs: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.kappa == kappa && r.n == n)
                    .map(|r| r.seconds)
                    .collect();
                (n, secs.iter().sum::<f64>() / secs.len() as f64)
            })
            .collect()
    }

    /// Log-log slope of mean runtime against `N` over the upper half of the
    /// `N` range.
    pub fn exponent(&self, kappa: f64) -> Result<f64> {
        let pts = self.mean_seconds(kappa);
        let keep = (pts.len() - pts.len() / 2).max(3).min(pts.len());
        let upper = &pts[pts.len() - keep..];
        let (x, y): (Vec<f64>, Vec<f64>) = upper
            .iter()
            .map(|&(n, s)| ((n as f64).ln(), s.ln()))
            .unzip();
        fit_slope(&x, &y)
    }

    /// Fraction of recorded level transitions with `N_{t+1} <= N_t / 2`,
    /// and the number of transitions checked.
    pub fn halving_rate(&self) -> (f64, usize) {
        let (mut ok, mut total) = (0, 0);
        for r in &self.rows {
            for w in r.trace.levels.windows(2) {
                total += 1;
                ok += (2 * w[1].size <= w[0].size) as usize;
            }
        }
        (if total == 0 { 1.0 } else { ok as f64 / total as f64 }, total)
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        writeln!(
            out,
            "# config: m={} lambda={} distance={} seeds={} knn_eps={} cap_factor={} memoize={}",
            c.m,
            c.lambda,
            c.distance,
            c.seeds.len(),
            c.search.eps,
            c.search.cap_factor,
            c.memoize
        )?;
        writeln!(out, "N\tkappa\tseed\tseconds\tdistance_evals\tlevels\tlevel_sizes")?;
        for r in &self.rows {
            let sizes: Vec<String> = r.trace.levels.iter().map(|l| l.size.to_string()).collect();
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}\t{}\t{}",
                r.n,
                r.kappa,
                r.seed,
                r.seconds,
                r.distance_evals,
                r.trace.depth(),
                sizes.join(",")
            )?;
        }
        Ok(())
    }
}

/// Runs `f` inside a dedicated pool of `threads` workers, so every parallel
/// section it reaches uses that many threads.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return Err(Error::parameter("threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::parameter(e.to_string()))?
        .install(f)
}

/// Least-squares slope of `y` against `x`. Refuses fewer than 3 points.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::parameter(format!(
            "slope fit needs at least 3 points, got {}",
            x.len().min(y.len())
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::parameter("slope fit needs distinct x values"));
    }
    Ok(sxy / sxx)
}

/// Times the candidate search on the empty state of Gaussian instances from
/// the sparse Erdős–Rényi generator. Only the search itself is timed.
pub fn bench_findbest_scaling(cfg: &ScalingConfig) -> Result<ScalingReport> {
    let mut ns = cfg.ns.clone();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(Error::parameter("scaling needs at least 3 distinct N values"));
    }
    let model = Model::gaussian(cfg.lambda)?;
    let mut rows = Vec::new();
    for &n in &ns {
        for &seed in &cfg.seeds {
            let (_, data) = fig2_instance(n, cfg.m, seed)?;
            let state = model.initial_state(&data)?;
            let nodes: Vec<usize> = (0..n).collect();
            for &kappa in &cfg.kappas {
                let m = ReconstructionConfig {
                    kappa,
                    ..Default::default()
                }
                .candidates_for(n);
                let cache = if cfg.memoize {
                    DistanceCache::new()
                } else {
                    DistanceCache::disabled()
                };
                cache.begin_generation();
                let oracle = model.oracle(&data, &state, cfg.distance, &cache);
                let mut rng = child_rng(seed, 0x7363_616c);
                let t = Instant::now();
                let res = find_best(m, &nodes, &oracle, &mut rng, &cfg.search)?;
                let seconds = t.elapsed().as_secs_f64();
                if !res.trace.halving_holds() {
                    log::error!("recursion halving violated at N={n} seed={seed}: {:?}", res.trace);
                }
                rows.push(ScalingRow {
                    n,
                    kappa,
                    seed,
                    seconds,
                    distance_evals: cache.evaluations(),
                    trace: res.trace,
                });
            }
        }
    }
    Ok(ScalingReport {
        config: cfg.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallSeries {
    pub kappa: f64,
    /// Mean cumulative recall per rank over seeds.
    pub mean: Vec<f64>,
    /// Seeds whose rank-1 pair matched the exhaustive oracle.
    pub rank1_hits: usize,
    pub runs: usize,
    pub traces: Vec<RecursionTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub series: Vec<RecallSeries>,
}

impl RecallReport {
    pub fn get(&self, kappa: f64) -> Option<&RecallSeries> {
        self.series.iter().find(|s| s.kappa == kappa)
    }

    /// Largest amount by which `low` beats `high` on their common ranks.
    pub fn worst_shortfall(&self, high: f64, low: f64) -> Option<f64> {
        let (h, l) = (self.get(high)?, self.get(low)?);
        Some(
            h.mean
                .iter()
                .zip(&l.mean)
                .map(|(a, b)| b - a)
                .fold(f64::NEG_INFINITY, f64::max),
        )
    }

    pub fn write_tsv<W: Write>(&self, mut out: W, config: &str) -> Result<()> {
        writeln!(out, "# config: {config}")?;
        writeln!(out, "kappa\trank\trecall")?;
        for s in &self.series {
            for (r, v) in s.mean.iter().enumerate() {
                writeln!(out, "{}\t{}\t{:.6}", s.kappa, r + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Mean cumulative recall of the search against the exhaustive oracle, per
/// `kappa`, over the given seeds, on one frozen state.
pub fn bench_recall(
    model: &Model,
    data: &SampleMatrix,
    state: &SparseWeights,
    mode: DistanceMode,
    kappas: &[f64],
    seeds: &[u64],
    search: &FindBestOptions,
) -> Result<RecallReport> {
    let n = data.n();
    if n > 2000 {
        return Err(Error::parameter("recall needs the exhaustive oracle; keep N <= 2000"));
    }
    let nodes: Vec<usize> = (0..n).collect();
    let cache = DistanceCache::new();
    cache.begin_generation();
    let oracle = model.oracle(data, state, mode, &cache);
    let mut series = Vec::new();
    for &kappa in kappas {
        let m = ReconstructionConfig {
            kappa,
            ..Default::default()
        }
        .candidates_for(n);
        let exact = find_best_exhaustive(m, &nodes, &oracle)?;
        let mut sum = vec![0.0; exact.pairs.len()];
        let mut rank1_hits = 0;
        let mut traces = Vec::new();
        for &seed in seeds {
            let mut rng = child_rng(seed, kappa.to_bits());
            let approx = find_best(m, &nodes, &oracle, &mut rng, search)?;
            let curve = recall_curve(&exact.pairs, &approx.pairs)?;
            if curve.first() == Some(&1.0) {
                rank1_hits += 1;
            }
            for (s, c) in sum.iter_mut().zip(&curve) {
                *s += c;
            }
            traces.push(approx.trace);
        }
        let runs = seeds.len().max(1);
        series.push(RecallSeries {
            kappa,
            mean: sum.into_iter().map(|s| s / runs as f64).collect(),
            rank1_hits,
            runs: seeds.len(),
            traces,
        });
    }
    Ok(RecallReport { series })
}

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    /// `cd` or `gcd k=<kappa>`.
    pub label: String,
    pub kappa: Option<f64>,
    pub result: Reconstruction,
}

impl ConvergenceRun {
    /// Wall-clock seconds until the recorded objective first reached
    /// `target`.
    pub fn time_to(&self, target: f64) -> Option<f64> {
        self.result.trace.time_to_reach(target)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.result.trace.last().and_then(|r| r.objective)
    }

    pub fn total_seconds(&self) -> f64 {
        self.result.trace.last().map_or(0.0, |r| r.seconds)
    }
}

/// GCD for each `kappa` and optionally the CD baseline, all recording the
/// objective after every iteration.
pub fn bench_convergence(
    model: &Model,
    data: &SampleMatrix,
    kappas: &[f64],
    include_cd: bool,
    base: &ReconstructionConfig,
) -> Result<Vec<ConvergenceRun>> {
    let mut runs = Vec::new();
    if include_cd {
        let cfg = CdConfig {
            eps: base.eps,
            max_iters: base.max_iters,
            record_objective: true,
        };
        runs.push(ConvergenceRun {
            label: "cd".into(),
            kappa: None,
            result: reconstruct_cd(model, data, &cfg)?,
        });
    }
    for &kappa in kappas {
        let cfg = ReconstructionConfig {
            kappa,
            record_objective: true,
            ..base.clone()
        };
        runs.push(ConvergenceRun {
            label: format!("gcd k={kappa}"),
            kappa: Some(kappa),
            result: reconstruct_gcd(model, data, &cfg)?,
        });
    }
    Ok(runs)
}

pub fn write_convergence_tsv<W: Write>(mut out: W, runs: &[ConvergenceRun], config: &str) -> Result<()> {
    writeln!(out, "# config: {config}")?;
    writeln!(out, "run\titer\tdelta\tcum_delta\tseconds\tcandidates\tobjective")?;
    for run in runs {
        let mut cum = 0.0;
        for r in &run.result.trace.iterations {
            cum += r.delta;
            let obj = r.objective.map_or_else(|| "nan".to_string(), |o| format!("{o:.12e}"));
            writeln!(
                out,
                "{}\t{}\t{:.6e}\t{:.6e}\t{:.6}\t{}\t{}",
                run.label, r.iter, r.delta, cum, r.seconds, r.candidates, obj
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `tp / (tp + fp)`, 1 when nothing was predicted.
    pub precision: f64,
    /// `tp / (tp + fn)`, 1 when the truth is empty.
    pub recall: f64,
    pub f1: f64,
    /// Root mean squared weight error over the union of both supports.
    pub rmse: f64,
}

impl SupportMetrics {
    pub fn write_tsv<W: Write>(&self, mut out: W, config: &str) -> Result<()> {
        writeln!(out, "# config: {config}")?;
        writeln!(out, "precision\trecall\tf1\trmse\ttp\tfp\tfn")?;
        writeln!(
            out,
            "{:.6}\t{:.6}\t{:.6}\t{:.6e}\t{}\t{}\t{}",
            self.precision,
            self.recall,
            self.f1,
            self.rmse,
            self.true_positives,
            self.false_positives,
            self.false_negatives
        )?;
        Ok(())
    }
}

/// Support recovery and weight error of `estimate` against `truth`.
pub fn eval_reconstruction(estimate: &SparseWeights, truth: &SparseWeights) -> Result<SupportMetrics> {
    if estimate.n() != truth.n() {
        return Err(Error::Shape(format!(
            "estimate has {} nodes, truth has {}",
            estimate.n(),
            truth.n()
        )));
    }
    let (mut tp, mut fp, mut sq, mut union) = (0usize, 0usize, 0.0, 0usize);
    for (&(i, j), &w) in estimate.edge_map() {
        let t = truth.weight(i, j);
        if t != 0.0 {
            tp += 1;
        } else {
            fp += 1;
        }
        sq += (w - t).powi(2);
        union += 1;
    }
    let mut fneg = 0;
    for (&(i, j), &t) in truth.edge_map() {
        if estimate.weight(i, j) == 0.0 {
            fneg += 1;
            sq += t * t;
            union += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SupportMetrics {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        precision,
        recall,
        f1,
        rmse: if union == 0 { 0.0 } else { (sq / union as f64).sqrt() },
    })
}

/// Largest absolute objective gradient over all pairs at the initial state
/// without penalty: for larger `lambda` every single-edge update is held
/// at zero by the kink.
pub fn lambda_max(kind: crate::models::ModelKind, data: &SampleMatrix) -> Result<f64> {
    use rayon::prelude::*;
    let model = Model::new(kind, 0.0)?;
    let state = model.initial_state(data)?;
    let n = data.n();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g: f64 = 0.0;
            for j in i + 1..n {
                g = g.max(model.gradient(data, &state, i, j)?.abs());
            }
            Ok(g)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// Penalty whose CD estimate has about `target_edges` edges, by bisection on
/// `log(lambda)` between `lo` and `hi`.
pub fn tune_lambda(
    kind: crate::models::ModelKind,
    data: &SampleMatrix,
    target_edges: usize,
    (mut lo, mut hi): (f64, f64),
    steps: usize,
    cd: &CdConfig,
) -> Result<f64> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::parameter("need 0 < lo < hi"));
    }
    for _ in 0..steps {
        let mid = (lo * hi).sqrt();
        let edges = reconstruct_cd(&Model::new(kind, mid)?, data, cd)?.state.edge_count();
        if edges > target_edges {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}
