//! Reconstruction drivers: greedy coordinate descent and the exhaustive
//! coordinate-descent baseline.

use std::time::Instant;

use parking_lot::Mutex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::findbest::{find_best, FindBestOptions};
use crate::models::{DistanceCache, DistanceMode, Model, PairView};
use crate::rng::child_rng;
use crate::types::{
    canonical, shift_row, CandidateEdge, ConvergenceTrace, IterationRecord, SampleMatrix,
    SparseWeights,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionConfig {
    /// Greediness: `round(kappa * N)` candidates per iteration.
    pub kappa: f64,
    /// Convergence threshold on the summed absolute weight change. `None`
    /// means `1e-6 * N`.
    pub eps: Option<f64>,
    pub max_iters: usize,
    pub distance: DistanceMode,
    pub seed: u64,
    /// Worker threads for the search and the update phase.
    pub threads: usize,
    pub search: FindBestOptions,
    /// Evaluate the log-posterior after every iteration (not timed).
    pub record_objective: bool,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            eps: None,
            max_iters: 1000,
            distance: DistanceMode::Exact,
            seed: 0,
            threads: 1,
            search: FindBestOptions::default(),
            record_objective: false,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::parameter(format!("kappa must be positive, got {}", self.kappa)));
        }
        if let Some(eps) = self.eps {
            if !(eps > 0.0) {
                return Err(Error::parameter(format!("eps must be positive, got {eps}")));
            }
        }
        if self.max_iters == 0 || self.threads == 0 {
            return Err(Error::parameter("max_iters and threads must be at least 1"));
        }
        Ok(())
    }

    pub fn eps_for(&self, n: usize) -> f64 {
        self.eps.unwrap_or(1e-6 * n as f64)
    }

    /// Candidates requested per iteration, rounding half to even.
    pub fn candidates_for(&self, n: usize) -> usize {
        ((self.kappa * n as f64).round_ties_even() as usize).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub state: SparseWeights,
    pub trace: ConvergenceTrace,
    /// False when `max_iters` ended the run first.
    pub converged: bool,
    /// Edge updates that hit the coupling bracket limit.
    pub bracket_warnings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdConfig {
    pub eps: Option<f64>,
    pub max_iters: usize,
    pub record_objective: bool,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            eps: None,
            max_iters: 1000,
            record_objective: false,
        }
    }
}

struct Clock {
    start: Instant,
    excluded: f64,
}

impl Clock {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            excluded: 0.0,
        }
    }

    fn seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64() - self.excluded
    }

    fn untimed<T>(&mut self, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.excluded += t.elapsed().as_secs_f64();
        out
    }
}

fn start_state(model: &Model, data: &SampleMatrix, init: Option<SparseWeights>) -> Result<SparseWeights> {
    let state = match init {
        Some(mut s) => {
            s.bind(data)?;
            s
        }
        None => model.initial_state(data)?,
    };
    model.validate(data, &state)?;
    Ok(state)
}

/// Greedy coordinate descent from the empty network.
pub fn reconstruct_gcd(
    model: &Model,
    data: &SampleMatrix,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    reconstruct_gcd_with(model, data, cfg, None, |_, _| {})
}

/// Greedy coordinate descent with an optional warm start and a hook that
/// may edit each iteration's candidate list before it is applied.
pub fn reconstruct_gcd_with(
    model: &Model,
    data: &SampleMatrix,
    cfg: &ReconstructionConfig,
    init: Option<SparseWeights>,
    mut filter: impl FnMut(usize, &mut Vec<CandidateEdge>) + Send,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::parameter(e.to_string()))?;
    pool.install(|| {
        let mut state = start_state(model, data, init)?;
        let n = data.n();
        let m = cfg.candidates_for(n);
        let eps = cfg.eps_for(n);
        let nodes: Vec<usize> = (0..n).collect();
        let cache = DistanceCache::new();
        let mut trace = ConvergenceTrace::default();
        let mut clock = Clock::new();
        let mut converged = false;
        let mut bracket_warnings = 0;
        if n < 2 {
            return Ok(Reconstruction {
                state,
                trace,
                converged: true,
                bracket_warnings,
            });
        }
        for iter in 0..cfg.max_iters {
            cache.begin_generation();
            let mut rng = child_rng(cfg.seed, iter as u64);
            let oracle = model.oracle(data, &state, cfg.distance, &cache);
            let mut candidates = find_best(m, &nodes, &oracle, &mut rng, &cfg.search)?.pairs;
            filter(iter, &mut candidates);
            let outcome = if cfg.threads > 1 && data.m() > 0 {
                apply_parallel(model, data, &mut state, &candidates)
            } else {
                apply_sequential(model, data, &mut state, candidates.iter().map(|c| (c.i, c.j)))
            }?;
            bracket_warnings += outcome.warnings;
            model.update_thetas(data, &mut state)?;
            let objective = if cfg.record_objective {
                Some(clock.untimed(|| model.log_posterior(data, &state))?)
            } else {
                None
            };
            trace.iterations.push(IterationRecord {
                iter,
                delta: outcome.delta,
                seconds: clock.seconds(),
                candidates: candidates.len(),
                objective,
            });
            log::debug!(
                "gcd iteration {iter}: delta {:.3e}, {} edges",
                outcome.delta,
                state.edge_count()
            );
            if outcome.delta < eps {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("gcd stopped after {} iterations without converging", cfg.max_iters);
        }
        Ok(Reconstruction {
            state,
            trace,
            converged,
            bracket_warnings,
        })
    })
}

/// Exhaustive coordinate descent: every pair once per sweep, then a node
/// parameter pass.
pub fn reconstruct_cd(model: &Model, data: &SampleMatrix, cfg: &CdConfig) -> Result<Reconstruction> {
    reconstruct_cd_from(model, data, cfg, None)
}

pub fn reconstruct_cd_from(
    model: &Model,
    data: &SampleMatrix,
    cfg: &CdConfig,
    init: Option<SparseWeights>,
) -> Result<Reconstruction> {
    if cfg.max_iters == 0 {
        return Err(Error::parameter("max_iters must be at least 1"));
    }
    let n = data.n();
    let eps = cfg.eps.unwrap_or(1e-6 * n as f64);
    if !(eps > 0.0) {
        return Err(Error::parameter(format!("eps must be positive, got {eps}")));
    }
    let mut state = start_state(model, data, init)?;
    let mut trace = ConvergenceTrace::default();
    let mut clock = Clock::new();
    let mut converged = false;
    let mut bracket_warnings = 0;
    let pairs = n * n.saturating_sub(1) / 2;
    for iter in 0..cfg.max_iters {
        let all = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        let outcome = apply_sequential(model, data, &mut state, all)?;
        bracket_warnings += outcome.warnings;
        model.update_thetas(data, &mut state)?;
        let objective = if cfg.record_objective {
            Some(clock.untimed(|| model.log_posterior(data, &state))?)
        } else {
            None
        };
        trace.iterations.push(IterationRecord {
            iter,
            delta: outcome.delta,
            seconds: clock.seconds(),
            candidates: pairs,
            objective,
        });
        log::debug!("cd sweep {iter}: delta {:.3e}", outcome.delta);
        if outcome.delta < eps {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("cd stopped after {} sweeps without converging", cfg.max_iters);
    }
    Ok(Reconstruction {
        state,
        trace,
        converged,
        bracket_warnings,
    })
}

struct Outcome {
    delta: f64,
    warnings: usize,
}

fn apply_sequential(
    model: &Model,
    data: &SampleMatrix,
    state: &mut SparseWeights,
    pairs: impl Iterator<Item = (usize, usize)>,
) -> Result<Outcome> {
    let mut out = Outcome {
        delta: 0.0,
        warnings: 0,
    };
    for (i, j) in pairs {
        let up = model.optimize_edge(data, state, i, j)?;
        if up.warning.is_some() {
            out.warnings += 1;
        }
        let old = state.set_edge(i, j, up.weight, data)?;
        out.delta += (up.weight - old).abs();
    }
    Ok(out)
}

/// Concurrent edge updates. A worker owns a pair only while it holds the
/// row locks of both endpoints; acquisition never blocks, and a pair whose
/// endpoint is busy is retried in the next round. Weights are read once up
/// front (each pair occurs once) and written back to the map afterwards.
fn apply_parallel(
    model: &Model,
    data: &SampleMatrix,
    state: &mut SparseWeights,
    candidates: &[CandidateEdge],
) -> Result<Outcome> {
    let mut pending: Vec<usize> = (0..candidates.len()).collect();
    let mut weights: Vec<f64> = candidates.iter().map(|c| state.weight(c.i, c.j)).collect();
    let old = weights.clone();
    let mut warnings = 0;
    {
        let (_, sums, theta, m) = state.parts_mut();
        let rows: Vec<Mutex<&mut [f64]>> = sums.chunks_mut(m).map(Mutex::new).collect();
        let update = |c: &CandidateEdge, w0: f64, si: &mut [f64], sj: &mut [f64]| {
            let view = PairView {
                i: c.i,
                j: c.j,
                xi: data.row(c.i),
                xj: data.row(c.j),
                si,
                sj,
                ti: theta[c.i],
                tj: theta[c.j],
                w0,
            };
            let up = model.optimize_view(&view);
            if !up.weight.is_finite() {
                return Err(Error::NumericOverflow("edge optimization"));
            }
            if up.weight != w0 {
                shift_row(si, up.weight - w0, data.row(c.j));
                shift_row(sj, up.weight - w0, data.row(c.i));
            }
            Ok(up)
        };
        let mut round = 0;
        while !pending.is_empty() {
            round += 1;
            let sequential = round > 4;
            let results: Vec<(usize, Option<(f64, bool)>)> = pending
                .par_iter()
                .with_min_len(if sequential { usize::MAX } else { 1 })
                .map(|&idx| {
                    let c = &candidates[idx];
                    let (Some(mut gi), Some(mut gj)) = (rows[c.i].try_lock(), rows[c.j].try_lock())
                    else {
                        return Ok((idx, None));
                    };
                    let up = update(c, weights[idx], &mut gi, &mut gj)?;
                    Ok((idx, Some((up.weight, up.warning.is_some()))))
                })
                .collect::<Result<_>>()?;
            pending.clear();
            for (idx, r) in results {
                match r {
                    Some((w, warned)) => {
                        weights[idx] = w;
                        warnings += warned as usize;
                    }
                    None => pending.push(idx),
                }
            }
        }
    }
    let (edges, _, _, _) = state.parts_mut();
    let mut delta = 0.0;
    for ((c, &w), &w0) in candidates.iter().zip(&weights).zip(&old) {
        delta += (w - w0).abs();
        let key = canonical(c.i, c.j);
        if w == 0.0 {
            edges.remove(&key);
        } else {
            edges.insert(key, w);
        }
    }
    Ok(Outcome { delta, warnings })
}
