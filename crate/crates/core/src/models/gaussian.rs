//! Gaussian pseudolikelihood terms.
//!
//! Per node and sample: `-(x + theta^2 m)^2 / (2 theta^2) - log theta`, where
//! `theta_i = 1 / sqrt(W_ii)`. The restriction to one coupling is a concave
//! quadratic, so edge updates are solved exactly by soft thresholding.

use super::PairView;

pub(crate) const THETA_MIN: f64 = 1e-8;

#[inline]
pub(crate) fn term(x: f64, sum: f64, theta: f64) -> f64 {
    let t2 = theta * theta;
    let r = x + t2 * sum;
    -r * r / (2.0 * t2) - theta.ln()
}

/// Coefficients of the pair restriction
/// `local(delta) = const - b * delta - a * delta^2 / 2`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Quadratic {
    pub a: f64,
    pub b: f64,
}

pub(crate) fn pair_quadratic(p: &PairView<'_>) -> Quadratic {
    const L: usize = 4;
    let (ti2, tj2) = (p.ti * p.ti, p.tj * p.tj);
    let n = p.xi.len();
    let (xi, xj, si, sj) = (&p.xi[..n], &p.xj[..n], &p.si[..n], &p.sj[..n]);
    let (mut a, mut b) = ([0.0; L], [0.0; L]);
    let mut step = |l: usize, xi: f64, xj: f64, si: f64, sj: f64| {
        let ri = xi + ti2 * si;
        let rj = xj + tj2 * sj;
        b[l] += ri * xj + rj * xi;
        a[l] += ti2 * xj * xj + tj2 * xi * xi;
    };
    let head = n - n % L;
    for c in (0..head).step_by(L) {
        let (xi, xj, si, sj) = (&xi[c..c + L], &xj[c..c + L], &si[c..c + L], &sj[c..c + L]);
        for l in 0..L {
            step(l, xi[l], xj[l], si[l], sj[l]);
        }
    }
    for s in head..n {
        step(0, xi[s], xj[s], si[s], sj[s]);
    }
    Quadratic {
        a: (a[0] + a[1]) + (a[2] + a[3]),
        b: (b[0] + b[1]) + (b[2] + b[3]),
    }
}

impl Quadratic {
    /// Change of the pair terms (without prior) when `W_ij` moves by `delta`.
    #[inline]
    pub fn local_change(&self, delta: f64) -> f64 {
        -self.b * delta - 0.5 * self.a * delta * delta
    }

    /// Derivative of the smooth part at `W_ij = w0 + delta`.
    #[inline]
    pub fn slope(&self, delta: f64) -> f64 {
        -self.b - self.a * delta
    }
}

pub(crate) fn optimize_pair(q: &Quadratic, w0: f64, lambda: f64) -> f64 {
    if q.a <= 0.0 {
        // No data touches this pair: only the prior remains.
        return if lambda > 0.0 { 0.0 } else { w0 };
    }
    let unpenalized = w0 - q.b / q.a;
    let shrink = lambda / q.a;
    if unpenalized > shrink {
        unpenalized - shrink
    } else if unpenalized < -shrink {
        unpenalized + shrink
    } else {
        0.0
    }
}

/// Closed-form maximizer of `sum_s term(x_s, m_s, theta)` over `theta > 0`.
/// With `t = theta^2` the stationarity condition is
/// `sum(m^2) t^2 + M t - sum(x^2) = 0`. Returns `(theta, clamped)`.
pub(crate) fn optimize_theta(x: &[f64], sums: &[f64], current: f64) -> (f64, bool) {
    if x.is_empty() {
        return (current, false);
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let smm: f64 = sums.iter().map(|v| v * v).sum();
    let mf = x.len() as f64;
    let t = 2.0 * sxx / (mf + (mf * mf + 4.0 * smm * sxx).sqrt());
    let theta = t.sqrt();
    if theta < THETA_MIN || !theta.is_finite() {
        (THETA_MIN, true)
    } else {
        (theta, false)
    }
}
