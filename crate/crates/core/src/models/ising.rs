//! Ising pseudolikelihood terms.
//!
//! Per node and sample: `x (m + theta) - log 2cosh(m + theta)`.

use super::line_search::maximize_l1;
use super::PairView;

/// Bracket limit for coupling updates; `tanh(64)` is 1 in double precision,
/// so larger couplings cannot change any conditional.
pub(crate) const COUPLING_LIMIT: f64 = 64.0;
pub(crate) const THETA_LIMIT: f64 = 20.0;
/// Relative bracket width at which the coupling search stops.
const ARG_TOL: f64 = 1e-13;

/// `log(2 cosh z)` without overflow.
#[inline]
pub fn log_2cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p()
}

#[inline]
pub(crate) fn term(x: f64, field: f64) -> f64 {
    x * field - log_2cosh(field)
}

/// Sum of the node-`i` and node-`j` terms with `W_ij` shifted by `delta`.
pub(crate) fn pair_local(p: &PairView<'_>, delta: f64) -> f64 {
    let mut acc = 0.0;
    for s in 0..p.xi.len() {
        let (xi, xj) = (p.xi[s], p.xj[s]);
        acc += term(xi, p.si[s] + p.ti + delta * xj);
        acc += term(xj, p.sj[s] + p.tj + delta * xi);
    }
    acc
}

/// Derivative of [`pair_local`] with respect to `delta`.
pub(crate) fn pair_slope(p: &PairView<'_>, delta: f64) -> f64 {
    let mut acc = 0.0;
    for s in 0..p.xi.len() {
        let (xi, xj) = (p.xi[s], p.xj[s]);
        acc += xj * (xi - (p.si[s] + p.ti + delta * xj).tanh());
        acc += xi * (xj - (p.sj[s] + p.tj + delta * xi).tanh());
    }
    acc
}

/// Returns `(w_star, bracket_limited)`.
pub(crate) fn optimize_pair(p: &PairView<'_>, lambda: f64) -> (f64, bool) {
    let w0 = p.w0;
    let r = maximize_l1(|w| pair_slope(p, w - w0), lambda, COUPLING_LIMIT, ARG_TOL);
    (r.arg, r.bracket_limited)
}

/// Maximizer of `sum_s x_s (m_s + theta) - log 2cosh(m_s + theta)` over
/// `|theta| <= THETA_LIMIT`. Returns `(theta, clamped)`.
pub(crate) fn optimize_theta(x: &[f64], sums: &[f64], start: f64) -> (f64, bool) {
    if x.is_empty() {
        return (start, false);
    }
    let slope = |t: f64| -> f64 {
        x.iter()
            .zip(sums)
            .map(|(&xs, &ms)| xs - (ms + t).tanh())
            .sum()
    };
    let curvature = |t: f64| -> f64 {
        x.iter()
            .zip(sums)
            .map(|(_, &ms)| {
                let c = (ms + t).cosh();
                1.0 / (c * c)
            })
            .sum()
    };
    // slope is decreasing in theta
    if slope(THETA_LIMIT) >= 0.0 {
        return (THETA_LIMIT, true);
    }
    if slope(-THETA_LIMIT) <= 0.0 {
        return (-THETA_LIMIT, true);
    }
    let (mut lo, mut hi) = (-THETA_LIMIT, THETA_LIMIT);
    let mut t = start.clamp(lo, hi);
    for _ in 0..200 {
        let g = slope(t);
        if g == 0.0 {
            return (t, false);
        }
        if g > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let h = curvature(t);
        let newton = t + g / h;
        let next = if h > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1e-13 * (1.0 + t.abs()) || hi - lo <= 1e-13 {
            return (next, false);
        }
        t = next;
    }
    (t, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_2cosh_is_stable() {
        assert!((log_2cosh(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_2cosh(1.3) - (2.0 * 1.3f64.cosh()).ln()).abs() < 1e-14);
        assert!((log_2cosh(-800.0) - 800.0).abs() < 1e-12);
        assert!(log_2cosh(1e300).is_finite());
    }

    #[test]
    fn conditional_probabilities_normalize() {
        for &h in &[-30.0, -3.2, -0.1, 0.0, 0.7, 5.0, 40.0] {
            let p_up = term(1.0, h).exp();
            let p_down = term(-1.0, h).exp();
            assert!((p_up + p_down - 1.0).abs() <= 1e-12, "h={h}");
        }
    }
}
