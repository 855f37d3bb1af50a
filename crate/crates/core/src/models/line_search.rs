//! One-dimensional maximization of `s(w) - lambda * |w|` for a concave,
//! smooth `s` with known derivative.

/// Outcome of [`maximize_l1`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LineMax {
    pub arg: f64,
    /// `true` when the expanding bracket reached `limit` without enclosing
    /// the maximum; `arg` is then `limit` on the ascent side.
    pub bracket_limited: bool,
}

/// Maximizes `f(w) = s(w) - lambda * |w|` given `slope = s'`.
///
/// The kink at zero is resolved first from the one-sided derivatives
/// `s'(0) -/+ lambda`, so zero is returned exactly. Otherwise the optimum
/// lies on the side where `f` increases; that half-line is bracketed by
/// doubling `b` from 1 (never beyond `limit`) and the root of the decreasing
/// one-sided derivative is bisected until the bracket is below
/// `tol * max(1, |w|)`.
pub(crate) fn maximize_l1<S>(slope: S, lambda: f64, limit: f64, tol: f64) -> LineMax
where
    S: Fn(f64) -> f64,
{
    let s0 = slope(0.0);
    if s0 - lambda <= 0.0 && s0 + lambda >= 0.0 {
        return LineMax {
            arg: 0.0,
            bracket_limited: false,
        };
    }
    let sign = if s0 > lambda { 1.0 } else { -1.0 };
    // derivative of f along the ascent direction, decreasing in u
    let h = |u: f64| sign * slope(sign * u) - lambda;

    let mut lo = 0.0;
    let mut hi = 1.0_f64.min(limit);
    while h(hi) > 0.0 {
        if hi >= limit {
            return LineMax {
                arg: sign * limit,
                bracket_limited: true,
            };
        }
        lo = hi;
        hi = (2.0 * hi).min(limit);
    }
    for _ in 0..200 {
        if hi - lo <= tol * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let v = h(mid);
        if v > 0.0 {
            lo = mid;
        } else if v < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            hi = mid;
        }
    }
    LineMax {
        arg: sign * 0.5 * (lo + hi),
        bracket_limited: false,
    }
}
