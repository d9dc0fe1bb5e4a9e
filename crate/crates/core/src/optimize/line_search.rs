//! Strong-Wolfe line search for minimization along a descent direction.
//!
//! Bracketing phase followed by `zoom`, with safeguarded cubic
//! interpolation. Trial points whose objective cannot be evaluated are
//! treated as `+∞`, which makes the search back off towards the origin.
//!
//! Once `φ(α)` differs from `φ(0)` only by roundoff, value comparisons are
//! meaningless and the approximate Wolfe test of Hager and Zhang is used
//! instead: `φ(α) ≤ φ(0) + ϵ` with `φ'(α) ≤ (1 − 2c1)|φ'(0)|`, where
//! `ϵ = flat_tol·|φ(0)|` is set above the evaluation noise of `φ`. That noise
//! grows with the length of the series and is several hundred ulps of `φ(0)`
//! at a thousand observations.

use crate::math;

/// One trial point: step, value and directional derivative.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Trial {
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
}

impl Trial {
    fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.dphi.is_finite()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct WolfeParams {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
    /// Bracketing never extends past this step.
    pub alpha_max: f64,
    /// Relative width of the band in which values count as equal.
    pub flat_tol: f64,
}

/// Result of a search. `Failed` carries the best point with sufficient
/// decrease seen, if any.
#[derive(Debug)]
pub(crate) enum Outcome<P> {
    Accepted(P),
    Failed { best: Option<P> },
}

/// Searches `φ(α)` for a step satisfying
///
/// ```text
/// φ(α) ≤ φ(0) + c1 α φ'(0),   |φ'(α)| ≤ c2 |φ'(0)|
/// ```
///
/// `eval` returns the trial together with a payload (e.g. the full
/// evaluation at that point), or `None` if the point is inadmissible.
pub(crate) fn strong_wolfe<P, E>(phi0: f64, dphi0: f64, alpha0: f64, params: WolfeParams, mut eval: E) -> Outcome<P>
where
    P: Clone,
    E: FnMut(f64) -> Option<(Trial, P)>,
{
    debug_assert!(dphi0 < 0.0);
    let mut evaluations = 0usize;
    let mut best: Option<(f64, P)> = None;
    let tests = Tests { phi0, dphi0, params };

    let mut probe = |alpha: f64, evaluations: &mut usize, best: &mut Option<(f64, P)>| -> (Trial, Option<P>) {
        *evaluations += 1;
        match eval(alpha) {
            Some((t, payload)) if t.is_finite() => {
                if tests.sufficient(&t) && best.as_ref().is_none_or(|(b, _)| t.phi < *b) {
                    *best = Some((t.phi, payload.clone()));
                }
                (t, Some(payload))
            }
            _ => (
                Trial {
                    alpha,
                    phi: f64::INFINITY,
                    dphi: f64::NAN,
                },
                None,
            ),
        }
    };

    let origin = Trial {
        alpha: 0.0,
        phi: phi0,
        dphi: dphi0,
    };
    let mut prev = origin;
    let mut alpha = alpha0.min(params.alpha_max);
    let mut first = true;

    loop {
        if evaluations >= params.max_evals {
            return Outcome::Failed { best: best.map(|b| b.1) };
        }
        let (cur, payload) = probe(alpha, &mut evaluations, &mut best);
        if !cur.is_finite() || !tests.sufficient(&cur) || (!first && tests.no_better(&cur, &prev)) {
            return zoom(prev, cur, tests, evaluations, best, &mut probe);
        }
        let done = tests.curvature(&cur);
        if !done && cur.dphi >= 0.0 {
            return zoom(cur, prev, tests, evaluations, best, &mut probe);
        }
        if done || alpha >= params.alpha_max {
            return match payload {
                Some(p) => Outcome::Accepted(p),
                None => Outcome::Failed { best: best.map(|b| b.1) },
            };
        }
        prev = cur;
        alpha = (2.0 * alpha).min(params.alpha_max);
        first = false;
    }
}

#[derive(Debug, Clone, Copy)]
struct Tests {
    phi0: f64,
    dphi0: f64,
    params: WolfeParams,
}

impl Tests {
    fn flat(&self, t: &Trial) -> bool {
        math::abs(t.phi - self.phi0) <= self.params.flat_tol * math::abs(self.phi0)
    }

    fn sufficient(&self, t: &Trial) -> bool {
        t.phi <= self.phi0 + self.params.c1 * t.alpha * self.dphi0
            || (self.flat(t) && t.dphi <= -(1.0 - 2.0 * self.params.c1) * self.dphi0)
    }

    fn curvature(&self, t: &Trial) -> bool {
        math::abs(t.dphi) <= -self.params.c2 * self.dphi0
    }

    /// `cur` does not improve on `other`; undecidable from values alone
    /// when both are within roundoff of `φ(0)`.
    fn no_better(&self, cur: &Trial, other: &Trial) -> bool {
        cur.phi >= other.phi && !(self.flat(cur) && self.flat(other))
    }
}

#[allow(clippy::too_many_arguments)]
fn zoom<P, F>(
    mut lo: Trial,
    mut hi: Trial,
    tests: Tests,
    mut evaluations: usize,
    mut best: Option<(f64, P)>,
    probe: &mut F,
) -> Outcome<P>
where
    F: FnMut(f64, &mut usize, &mut Option<(f64, P)>) -> (Trial, Option<P>),
{
    let params = tests.params;
    loop {
        if evaluations >= params.max_evals {
            return Outcome::Failed { best: best.map(|b| b.1) };
        }
        let width = math::abs(hi.alpha - lo.alpha);
        if width <= 1e-14 * lo.alpha.max(hi.alpha).max(1e-300) {
            return Outcome::Failed { best: best.map(|b| b.1) };
        }
        let alpha = interpolate(&lo, &hi);
        let (cur, payload) = probe(alpha, &mut evaluations, &mut best);
        if !cur.is_finite() || !tests.sufficient(&cur) || tests.no_better(&cur, &lo) {
            hi = cur;
        } else {
            if let (true, Some(p)) = (tests.curvature(&cur), payload) {
                return Outcome::Accepted(p);
            }
            if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
}

/// Minimizer of the cubic through `lo` and `hi`, kept inside the middle 80%
/// of the interval; bisection when `hi` carries no usable information.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !hi.is_finite() || !lo.is_finite() {
        return mid;
    }
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.phi - hi.phi) / (a - b);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b - a).signum() * math::sqrt(disc);
    let t = b - (b - a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if !t.is_finite() {
        return mid;
    }
    t.clamp(left + margin, right - margin)
}
