//! Synthetic ground truth: Erdős–Rényi precision matrices and samplers for
//! the Gaussian and Ising models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{child_rng, rng_from};
use crate::types::{SampleMatrix, SparseWeights};

/// Above this many nodes [`sample_gaussian_auto`] switches from dense
/// Cholesky to the sparse conjugate-gradient sampler.
pub const DENSE_SAMPLING_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub n: usize,
    pub mean_deg: f64,
    pub weight_mu: f64,
    pub weight_sigma: f64,
    /// Diagonal-dominance slack, in `(0, 1)`.
    pub epsilon: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Mean degree 5, weights `N(-1000, 10)`, slack `1e-3`.
    pub fn fig2(n: usize, seed: u64) -> Self {
        Self {
            n,
            mean_deg: 5.0,
            weight_mu: -1e3,
            weight_sigma: 10.0,
            epsilon: 1e-3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::parameter("generator needs at least two nodes"));
        }
        if !(self.mean_deg >= 0.0 && self.mean_deg < (self.n - 1) as f64) {
            return Err(Error::parameter(format!(
                "mean degree must lie in [0, n-1), got {}",
                self.mean_deg
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::parameter(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.weight_mu.is_finite() && self.weight_sigma >= 0.0 && self.weight_sigma.is_finite()) {
            return Err(Error::parameter("weight distribution must be finite with sigma >= 0"));
        }
        Ok(())
    }
}

/// Sparse SPD precision matrix. Off-diagonal support is Erdős–Rényi with
/// edge probability `mean_deg / (n - 1)`; the diagonal
/// `W_ii = sum_j |W_ij| / (1 - epsilon)^2` is stored as `theta_i = W_ii^(-1/2)`.
/// Isolated nodes get `W_ii = 1`.
pub fn gen_er_precision(spec: &GeneratorSpec) -> Result<SparseWeights> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = child_rng(spec.seed, 0x6765_6e);
    let weight = Normal::new(spec.weight_mu, spec.weight_sigma)
        .map_err(|e| Error::parameter(e.to_string()))?;
    let p = spec.mean_deg / (n - 1) as f64;
    let total = n * (n - 1) / 2;
    let mut edges = Vec::new();
    if p > 0.0 {
        // geometric skipping over the pairs in row-major order
        let log_q = (-p).ln_1p();
        let (mut i, mut row_start, mut idx) = (0usize, 0usize, 0usize);
        loop {
            let u: f64 = rng.random();
            let skip = if p >= 1.0 { 0.0 } else { ((1.0 - u).ln() / log_q).floor() };
            if skip >= (total - idx) as f64 {
                break;
            }
            idx += skip as usize;
            while idx >= row_start + (n - 1 - i) {
                row_start += n - 1 - i;
                i += 1;
            }
            let j = i + 1 + (idx - row_start);
            let mut w = weight.sample(&mut rng);
            while w == 0.0 {
                w = weight.sample(&mut rng);
            }
            edges.push((i, j, w));
            idx += 1;
            if idx >= total {
                break;
            }
        }
    }
    let mut row_abs = vec![0.0; n];
    for &(i, j, w) in &edges {
        row_abs[i] += w.abs();
        row_abs[j] += w.abs();
    }
    let scale = (1.0 - spec.epsilon).powi(2);
    let theta = row_abs
        .iter()
        .map(|&s| {
            let diag = if s > 0.0 { s / scale } else { 1.0 };
            1.0 / diag.sqrt()
        })
        .collect();
    SparseWeights::from_parts(n, edges, theta)
}

/// `W_ii = theta_i^-2`.
pub fn diagonal(truth: &SparseWeights) -> Vec<f64> {
    truth.thetas().iter().map(|t| 1.0 / (t * t)).collect()
}

/// Dense precision matrix with the diagonal restored from `theta`.
pub fn precision_matrix(truth: &SparseWeights) -> DMatrix<f64> {
    let mut w = DMatrix::from_diagonal(&DVector::from_vec(diagonal(truth)));
    for (i, j, v) in truth.sorted_edges() {
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    w
}

fn to_samples(n: usize, m: usize, column_major: &[f64]) -> Result<SampleMatrix> {
    let mut values = vec![0.0; n * m];
    for s in 0..m {
        for i in 0..n {
            values[i * m + s] = column_major[s * n + i];
        }
    }
    SampleMatrix::new(n, m, values)
}

/// `M` draws from `N(0, W^-1)` via dense Cholesky `W = L L^T` and
/// `L^T x = z`.
pub fn sample_gaussian(truth: &SparseWeights, m: usize, seed: u64) -> Result<SampleMatrix> {
    let n = truth.n();
    let chol = precision_matrix(truth)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let lt = chol.l().transpose();
    let mut rng = rng_from(seed);
    let z = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
    let x = lt
        .solve_upper_triangular(&z)
        .ok_or(Error::NotPositiveDefinite)?;
    to_samples(n, m, x.as_slice())
}

/// `M` draws from `N(0, W^-1)` without forming `W` densely. Draws
/// `u ~ N(0, W)` from the splitting of `W` into one rank-one term per edge
/// plus a non-negative diagonal remainder, then solves `W x = u` by
/// Jacobi-preconditioned conjugate gradients. Requires `W` diagonally
/// dominant, which [`gen_er_precision`] guarantees.
pub fn sample_gaussian_cg(truth: &SparseWeights, m: usize, seed: u64) -> Result<SampleMatrix> {
    let n = truth.n();
    let diag = diagonal(truth);
    let edges = truth.sorted_edges();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut remainder = diag.clone();
    for &(i, j, w) in &edges {
        adj[i].push((j, w));
        adj[j].push((i, w));
        remainder[i] -= w.abs();
        remainder[j] -= w.abs();
    }
    if remainder.iter().any(|&r| r < -1e-9 * r.abs().max(1.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    let matvec = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            let mut acc = diag[i] * x[i];
            for &(j, w) in &adj[i] {
                acc += w * x[j];
            }
            y[i] = acc;
        }
    };
    let mut rng = rng_from(seed);
    let mut out = vec![0.0; n * m];
    let mut u = vec![0.0; n];
    for s in 0..m {
        u.iter_mut().for_each(|v| *v = 0.0);
        for &(i, j, w) in &edges {
            let g: f64 = StandardNormal.sample(&mut rng);
            let a = w.abs().sqrt() * g;
            u[i] += a;
            u[j] += a * w.signum();
        }
        for i in 0..n {
            let g: f64 = StandardNormal.sample(&mut rng);
            u[i] += remainder[i].max(0.0).sqrt() * g;
        }
        let x = conjugate_gradient(&matvec, &diag, &u, 1e-12, 20 * n + 100)?;
        out[s * n..(s + 1) * n].copy_from_slice(&x);
    }
    to_samples(n, m, &out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_gradient(
    matvec: &dyn Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = rel_tol * dot(b, b).sqrt();
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= target {
            return Ok(x);
        }
        matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if dot(&r, &r).sqrt() <= target * 1e3 {
        log::warn!("conjugate gradients stopped at the iteration cap");
        Ok(x)
    } else {
        Err(Error::NumericOverflow("conjugate-gradient solve"))
    }
}

/// Dense Cholesky up to [`DENSE_SAMPLING_LIMIT`] nodes, conjugate gradients
/// beyond.
pub fn sample_gaussian_auto(truth: &SparseWeights, m: usize, seed: u64) -> Result<SampleMatrix> {
    if truth.n() <= DENSE_SAMPLING_LIMIT {
        sample_gaussian(truth, m, seed)
    } else {
        sample_gaussian_cg(truth, m, seed)
    }
}

/// Ground truth from [`GeneratorSpec::fig2`] and `m` Gaussian samples.
pub fn fig2_instance(n: usize, m: usize, seed: u64) -> Result<(SparseWeights, SampleMatrix)> {
    let truth = gen_er_precision(&GeneratorSpec::fig2(n, seed))?;
    let data = sample_gaussian_auto(&truth, m, crate::rng::derive_seed(seed, 0x73616d))?;
    Ok((truth, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            thin: 10,
        }
    }
}

/// Gibbs sampling of the Ising model with couplings `W` and fields `theta`:
/// sequential single-site updates with `P(x_i = +1 | rest) =
/// 1 / (1 + exp(-2 (m_i + theta_i)))`.
pub fn sample_ising(
    truth: &SparseWeights,
    m: usize,
    cfg: GibbsConfig,
    seed: u64,
) -> Result<SampleMatrix> {
    if cfg.thin == 0 {
        return Err(Error::parameter("thinning interval must be at least 1"));
    }
    let n = truth.n();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, j, w) in truth.sorted_edges() {
        if !w.is_finite() {
            return Err(Error::parameter(format!("coupling ({i}, {j}) is not finite")));
        }
        adj[i].push((j, w));
        adj[j].push((i, w));
    }
    let mut rng = rng_from(seed);
    let mut x: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let sweep = |x: &mut [f64], rng: &mut rand_chacha::ChaCha8Rng| {
        for i in 0..n {
            let h: f64 = adj[i].iter().map(|&(j, w)| w * x[j]).sum::<f64>() + truth.theta(i);
            let p_up = 1.0 / (1.0 + (-2.0 * h).exp());
            x[i] = if rng.random::<f64>() < p_up { 1.0 } else { -1.0 };
        }
    };
    for _ in 0..cfg.burn_in {
        sweep(&mut x, &mut rng);
    }
    let mut out = vec![0.0; n * m];
    for s in 0..m {
        for _ in 0..cfg.thin {
            sweep(&mut x, &mut rng);
        }
        out[s * n..(s + 1) * n].copy_from_slice(&x);
    }
    let samples = to_samples(n, m, &out)?;
    samples.check_spins()?;
    Ok(samples)
}
