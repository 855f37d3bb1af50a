//! Pseudolikelihood objectives with a Laplace prior on the couplings.
//!
//! The log-posterior is evaluated up to additive constants that do not depend
//! on `W` or `theta` (`log sqrt(2 pi)` per Gaussian term and `log(lambda/2)`
//! per pair), so differences between states are exact.
//!
//! Every pair operation touches only the two rows involved and runs in
//! `O(M)` through the cached neighbor sums of [`SparseWeights`].

mod cache;
pub mod gaussian;
pub mod ising;
mod line_search;

use std::fmt;
use std::str::FromStr;

pub use cache::DistanceCache;

use crate::error::{Error, Result};
use crate::nndescent::PairDistance;
use crate::types::{SampleMatrix, SparseWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ising,
    Gaussian,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ising => "ising",
            ModelKind::Gaussian => "gaussian",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ising" => Ok(ModelKind::Ising),
            "gaussian" | "normal" => Ok(ModelKind::Gaussian),
            other => Err(Error::parameter(format!("unknown model `{other}`"))),
        }
    }
}

/// How candidate pairs are scored during the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DistanceMode {
    /// Minus the best achievable log-posterior improvement on the pair.
    #[default]
    Exact,
    /// Minus the steepest one-sided log-posterior slope at the current
    /// weight (the absolute gradient away from the kink at zero).
    Gradient,
}

impl fmt::Display for DistanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMode::Exact => "exact",
            DistanceMode::Gradient => "gradient",
        })
    }
}

impl FromStr for DistanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(DistanceMode::Exact),
            "gradient" => Ok(DistanceMode::Gradient),
            other => Err(Error::parameter(format!("unknown distance mode `{other}`"))),
        }
    }
}

/// Non-fatal conditions reported by the 1-D optimizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimWarning {
    /// The bracket grew to its limit without enclosing the maximum; the
    /// weight returned is the best point within the limit.
    BracketLimit { i: usize, j: usize, limit: f64 },
    /// The node parameter optimum lies at (or beyond) the allowed range.
    ThetaClamped { node: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeUpdate {
    pub weight: f64,
    /// Log-posterior increase obtained by moving to `weight` (never negative).
    pub gain: f64,
    pub warning: Option<OptimWarning>,
}

/// Upper end of the distances given to zero-gain pairs at `W_ij = 0`.
pub const PLATEAU_SCALE: f64 = 1e-200;

impl EdgeUpdate {
    /// The exact-mode search distance: the negated gain. The shared
    /// `-log pi(W)` offset of the frozen state is dropped, which leaves every
    /// ranking unchanged.
    pub fn distance(&self) -> f64 {
        0.0 - self.gain
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaUpdate {
    pub theta: f64,
    pub warning: Option<OptimWarning>,
}

/// Borrowed view of everything a pair update reads.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairView<'a> {
    pub i: usize,
    pub j: usize,
    pub xi: &'a [f64],
    pub xj: &'a [f64],
    pub si: &'a [f64],
    pub sj: &'a [f64],
    pub ti: f64,
    pub tj: f64,
    pub w0: f64,
}

impl<'a> PairView<'a> {
    fn new(data: &'a SampleMatrix, state: &'a SparseWeights, i: usize, j: usize) -> Self {
        Self {
            i,
            j,
            xi: data.row(i),
            xj: data.row(j),
            si: state.row_sums(i),
            sj: state.row_sums(j),
            ti: state.theta(i),
            tj: state.theta(j),
            w0: state.weight(i, j),
        }
    }
}

#[inline]
fn signum0(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A graphical model objective with L1 penalty `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub lambda: f64,
}

impl Model {
    pub fn new(kind: ModelKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::parameter(format!(
                "L1 penalty must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self { kind, lambda })
    }

    pub fn ising(lambda: f64) -> Result<Self> {
        Self::new(ModelKind::Ising, lambda)
    }

    pub fn gaussian(lambda: f64) -> Result<Self> {
        Self::new(ModelKind::Gaussian, lambda)
    }

    /// Node parameter of a freshly created state before any fitting.
    pub fn neutral_theta(&self) -> f64 {
        match self.kind {
            ModelKind::Ising => 0.0,
            ModelKind::Gaussian => 1.0,
        }
    }

    /// Checks data domain, state dimensions and parameter domain.
    pub fn validate(&self, data: &SampleMatrix, state: &SparseWeights) -> Result<()> {
        state.check_data(data)?;
        match self.kind {
            ModelKind::Ising => data.check_spins()?,
            ModelKind::Gaussian => {
                if let Some(i) = state.thetas().iter().position(|&t| !(t > 0.0 && t.is_finite())) {
                    return Err(Error::parameter(format!(
                        "Gaussian model needs theta > 0; node {i} has {}",
                        state.theta(i)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Empty network bound to `data` with every `theta_i` at its optimum.
    pub fn initial_state(&self, data: &SampleMatrix) -> Result<SparseWeights> {
        if self.kind == ModelKind::Ising {
            data.check_spins()?;
        }
        let mut state = SparseWeights::empty_for(data, self.neutral_theta());
        self.update_thetas(data, &mut state)?;
        Ok(state)
    }

    /// Log pseudolikelihood plus log prior, up to state-independent
    /// constants.
    pub fn log_posterior(&self, data: &SampleMatrix, state: &SparseWeights) -> Result<f64> {
        self.validate(data, state)?;
        let mut total = 0.0;
        for i in 0..data.n() {
            total += self.node_terms(data.row(i), state.row_sums(i), state.theta(i));
        }
        let l1: f64 = state.edge_map().values().map(|w| w.abs()).sum();
        total -= self.lambda * l1;
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::NumericOverflow("log-posterior"))
        }
    }

    /// Term of node `i` in sample `s`. For the Ising model this is
    /// `log P(x_i | x_rest)`; for the Gaussian model, the conditional log
    /// density without its `-log(2 pi) / 2` constant.
    pub fn node_term(&self, data: &SampleMatrix, state: &SparseWeights, i: usize, s: usize) -> Result<f64> {
        self.validate(data, state)?;
        state.check_node(i)?;
        if s >= data.m() {
            return Err(Error::parameter(format!("sample {s} out of range")));
        }
        let (x, sum, theta) = (data.get(i, s), state.row_sums(i)[s], state.theta(i));
        Ok(match self.kind {
            ModelKind::Ising => ising::term(x, sum + theta),
            ModelKind::Gaussian => gaussian::term(x, sum, theta),
        })
    }

    fn node_terms(&self, x: &[f64], sums: &[f64], theta: f64) -> f64 {
        match self.kind {
            ModelKind::Ising => x
                .iter()
                .zip(sums)
                .map(|(&xs, &ms)| ising::term(xs, ms + theta))
                .sum(),
            ModelKind::Gaussian => x
                .iter()
                .zip(sums)
                .map(|(&xs, &ms)| gaussian::term(xs, ms, theta))
                .sum(),
        }
    }

    fn check_pair(&self, state: &SparseWeights, i: usize, j: usize) -> Result<()> {
        if i == j {
            return Err(Error::DiagonalWrite(i));
        }
        state.check_node(i)?;
        state.check_node(j)
    }

    /// Exact maximization of the log-posterior over `W_ij` alone.
    pub fn optimize_edge(
        &self,
        data: &SampleMatrix,
        state: &SparseWeights,
        i: usize,
        j: usize,
    ) -> Result<EdgeUpdate> {
        self.check_pair(state, i, j)?;
        state.check_data(data)?;
        let up = self.optimize_view(&PairView::new(data, state, i, j));
        if !(up.weight.is_finite() && up.gain.is_finite()) {
            return Err(Error::NumericOverflow("edge optimization"));
        }
        if let Some(w) = up.warning {
            log::warn!("{w:?}");
        }
        Ok(up)
    }

    pub(crate) fn optimize_view(&self, p: &PairView<'_>) -> EdgeUpdate {
        let lambda = self.lambda;
        let penalty_change = |w: f64| lambda * (w.abs() - p.w0.abs());
        match self.kind {
            ModelKind::Gaussian => self.gaussian_update(p, &gaussian::pair_quadratic(p)),
            ModelKind::Ising => {
                let (w, limited) = ising::optimize_pair(p, lambda);
                let warning = limited.then_some(OptimWarning::BracketLimit {
                    i: p.i,
                    j: p.j,
                    limit: ising::COUPLING_LIMIT,
                });
                if w == p.w0 {
                    return EdgeUpdate {
                        weight: w,
                        gain: 0.0,
                        warning,
                    };
                }
                let gain = ising::pair_local(p, w - p.w0)
                    - ising::pair_local(p, 0.0)
                    - penalty_change(w);
                if gain > 0.0 {
                    EdgeUpdate {
                        weight: w,
                        gain,
                        warning,
                    }
                } else {
                    EdgeUpdate {
                        weight: p.w0,
                        gain: 0.0,
                        warning,
                    }
                }
            }
        }
    }

    fn gaussian_update(&self, p: &PairView<'_>, q: &gaussian::Quadratic) -> EdgeUpdate {
        let w = gaussian::optimize_pair(q, p.w0, self.lambda);
        let gain = q.local_change(w - p.w0) - self.lambda * (w.abs() - p.w0.abs());
        if w == p.w0 || gain <= 0.0 {
            EdgeUpdate {
                weight: p.w0,
                gain: 0.0,
                warning: None,
            }
        } else {
            EdgeUpdate {
                weight: w,
                gain,
                warning: None,
            }
        }
    }

    /// Analytic `d log pi / d W_ij` at the current weight. At `W_ij = 0` the
    /// prior contributes nothing (the symmetric difference quotient of
    /// `|w|` vanishes there).
    pub fn gradient(
        &self,
        data: &SampleMatrix,
        state: &SparseWeights,
        i: usize,
        j: usize,
    ) -> Result<f64> {
        self.check_pair(state, i, j)?;
        state.check_data(data)?;
        Ok(self.gradient_view(&PairView::new(data, state, i, j)))
    }

    pub(crate) fn gradient_view(&self, p: &PairView<'_>) -> f64 {
        self.smooth_slope(p) - self.lambda * signum0(p.w0)
    }

    /// Steepest one-sided ascent rate along `W_ij`, from the smooth slope
    /// `s`. Away from zero this is the absolute gradient; at zero it is
    /// `max(|s| - lambda, 0)`, so a pair held at zero by the penalty scores
    /// as having no gradient.
    fn ascent_slope(&self, s: f64, w0: f64) -> f64 {
        if w0 != 0.0 {
            (s - self.lambda * signum0(w0)).abs()
        } else {
            (s.abs() - self.lambda).max(0.0)
        }
    }

    /// Search distance of `(i, j)` under the given mode, memoized in `cache`.
    pub fn distance(
        &self,
        data: &SampleMatrix,
        state: &SparseWeights,
        i: usize,
        j: usize,
        mode: DistanceMode,
        cache: &DistanceCache,
    ) -> Result<f64> {
        self.check_pair(state, i, j)?;
        state.check_data(data)?;
        let d = cache.get_or_compute(i, j, || self.raw_distance(data, state, i, j, mode));
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::NumericOverflow("distance"))
        }
    }

    #[inline]
    pub(crate) fn raw_distance(
        &self,
        data: &SampleMatrix,
        state: &SparseWeights,
        i: usize,
        j: usize,
        mode: DistanceMode,
    ) -> f64 {
        let p = PairView::new(data, state, i, j);
        let q = match self.kind {
            ModelKind::Gaussian => Some(gaussian::pair_quadratic(&p)),
            ModelKind::Ising => None,
        };
        let s = q.map_or_else(|| ising::pair_slope(&p, 0.0), |q| q.slope(0.0));
        if p.w0 == 0.0 && s.abs() <= self.lambda {
            return self.plateau_distance(s.abs());
        }
        match (mode, q) {
            (DistanceMode::Gradient, _) => 0.0 - self.ascent_slope(s, p.w0),
            (DistanceMode::Exact, Some(q)) => self.gaussian_update(&p, &q).distance(),
            (DistanceMode::Exact, None) => self.optimize_view(&p).distance(),
        }
    }

    fn smooth_slope(&self, p: &PairView<'_>) -> f64 {
        match self.kind {
            ModelKind::Gaussian => gaussian::pair_quadratic(p).slope(0.0),
            ModelKind::Ising => ising::pair_slope(p, 0.0),
        }
    }

    /// Tie-break among pairs held at zero by the penalty, which all have
    /// zero gain: `(lambda - |s'|) / (lambda + |s'|)` mapped into
    /// `[0, PLATEAU_SCALE]`, so pairs closer to leaving the kink rank first.
    /// The values sit far below any nonzero gain, so no other ordering changes.
    fn plateau_distance(&self, s: f64) -> f64 {
        if self.lambda + s > 0.0 {
            PLATEAU_SCALE * (self.lambda - s) / (self.lambda + s)
        } else {
            0.0
        }
    }

    /// Maximizer of the log-posterior over `theta_i` alone.
    pub fn optimize_theta(
        &self,
        data: &SampleMatrix,
        state: &SparseWeights,
        i: usize,
    ) -> Result<ThetaUpdate> {
        state.check_node(i)?;
        state.check_data(data)?;
        let (x, sums, current) = (data.row(i), state.row_sums(i), state.theta(i));
        let (theta, clamped) = match self.kind {
            ModelKind::Ising => ising::optimize_theta(x, sums, current),
            ModelKind::Gaussian => gaussian::optimize_theta(x, sums, current),
        };
        let warning = clamped.then_some(OptimWarning::ThetaClamped {
            node: i,
            value: theta,
        });
        if !theta.is_finite() {
            return Err(Error::NumericOverflow("theta optimization"));
        }
        Ok(ThetaUpdate { theta, warning })
    }

    /// One pass of [`Model::optimize_theta`] over every node. Returns the
    /// number of clamped nodes.
    pub fn update_thetas(&self, data: &SampleMatrix, state: &mut SparseWeights) -> Result<usize> {
        let mut clamped = 0;
        for i in 0..state.n() {
            let up = self.optimize_theta(data, state, i)?;
            if up.warning.is_some() {
                clamped += 1;
            }
            state.set_theta(i, up.theta);
        }
        if clamped > 0 {
            log::warn!("{clamped} node parameters clamped to their bounds");
        }
        Ok(clamped)
    }

    /// Distance oracle over a frozen state, for the candidate search.
    pub fn oracle<'a>(
        &'a self,
        data: &'a SampleMatrix,
        state: &'a SparseWeights,
        mode: DistanceMode,
        cache: &'a DistanceCache,
    ) -> ModelDistance<'a> {
        ModelDistance {
            model: self,
            data,
            state,
            mode,
            cache,
        }
    }
}

/// [`PairDistance`] backed by a model and a frozen state. Non-finite
/// distances surface as search errors.
#[derive(Clone, Copy)]
pub struct ModelDistance<'a> {
    model: &'a Model,
    data: &'a SampleMatrix,
    state: &'a SparseWeights,
    mode: DistanceMode,
    cache: &'a DistanceCache,
}

impl PairDistance for ModelDistance<'_> {
    #[inline]
    fn distance(&self, i: usize, j: usize) -> f64 {
        self.cache.get_or_compute(i, j, || {
            self.model
                .raw_distance(self.data, self.state, i, j, self.mode)
        })
    }
}

#[cfg(test)]
mod tests;
