//! Root search and Black-Scholes inversion.
//!
//! Every one-dimensional search in the calibration is posed as a
//! [`MonotoneRootProblem`]: a continuous evaluator that is strictly monotone
//! on a bracket in a known direction. Bisection is then guaranteed to converge
//! and a bracket failure always means that the caller broke a monotonicity
//! contract.

use std::f64::consts::SQRT_2;

use thiserror::Error;

use crate::scalar::Real;

pub const DEFAULT_ABS_TOL: f64 = 1e-12;
pub const DEFAULT_REL_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 200;
/// Number of doublings (or halvings) tried by [`expand_bracket`].
pub const MAX_BRACKET_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("no sign change on [{lo}, {hi}] (f(lo)={f_lo}, f(hi)={f_hi})")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("bisection did not reach tolerance after {iterations} iterations on [{lo}, {hi}]")]
    MaxIterExceeded { iterations: usize, lo: f64, hi: f64 },
    #[error("no bracket found from seed {seed}")]
    BracketNotFound { seed: f64 },
    #[error("price {price} outside the open no-arbitrage band ({lower}, {upper})")]
    OutOfBand { price: f64, lower: f64, upper: f64 },
    #[error("invalid root problem: {0}")]
    InvalidProblem(&'static str),
}

pub type RootResult<T> = Result<T, RootError>;

/// A scalar equation `evaluator(t) = 0` on `(lo, hi)` with a strictly monotone
/// evaluator. `hi` may be `+inf`, in which case a finite upper end is found by
/// doubling the distance from `lo`.
#[derive(Clone)]
pub struct MonotoneRootProblem<F, E> {
    pub evaluator: E,
    pub lo: F,
    pub hi: F,
    pub direction: Direction,
    pub abs_tol: F,
    pub rel_tol: F,
    pub max_iter: usize,
}

impl<F: Real, E: Fn(F) -> F> MonotoneRootProblem<F, E> {
    pub fn new(evaluator: E, lo: F, hi: F, direction: Direction) -> Self {
        Self {
            evaluator,
            lo,
            hi,
            direction,
            abs_tol: F::lit(DEFAULT_ABS_TOL),
            rel_tol: F::lit(DEFAULT_REL_TOL),
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn with_tolerances(mut self, abs_tol: F, rel_tol: F) -> Self {
        self.abs_tol = abs_tol;
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// Evaluator value flipped so that it is increasing.
    fn oriented(&self, t: F) -> F {
        let v = (self.evaluator)(t);
        match self.direction {
            Direction::Increasing => v,
            Direction::Decreasing => -v,
        }
    }
}

/// Bisection on a monotone bracket.
///
/// Returns a point of the final interval once its width drops below
/// `abs_tol + rel_tol * |root|`, or an exact zero if one is hit on the way.
pub fn bisect<F: Real, E: Fn(F) -> F>(problem: &MonotoneRootProblem<F, E>) -> RootResult<F> {
    if !(problem.abs_tol > F::zero()) || problem.rel_tol < F::zero() || problem.max_iter == 0 {
        return Err(RootError::InvalidProblem("tolerances must be positive and max_iter >= 1"));
    }
    if !(problem.lo < problem.hi) || !problem.lo.is_finite() {
        return Err(RootError::InvalidProblem("bracket must satisfy lo < hi with finite lo"));
    }
    let mut lo = problem.lo;
    let mut g_lo = problem.oriented(lo);
    let mut hi = problem.hi;
    let mut g_hi;
    if hi.is_infinite() {
        let mut step = lo.abs().max(F::one());
        let mut found = None;
        for _ in 0..MAX_BRACKET_STEPS {
            let cand = lo + step;
            let g = problem.oriented(cand);
            if g >= F::zero() {
                found = Some((cand, g));
                break;
            }
            lo = cand;
            g_lo = g;
            step = step + step;
        }
        match found {
            Some((h, g)) => {
                hi = h;
                g_hi = g;
            }
            None => return Err(RootError::BracketNotFound { seed: problem.lo.as_f64() }),
        }
    } else {
        g_hi = problem.oriented(hi);
    }
    if g_lo == F::zero() {
        return Ok(lo);
    }
    if g_hi == F::zero() {
        return Ok(hi);
    }
    if !(g_lo < F::zero() && g_hi > F::zero()) {
        let sign = match problem.direction {
            Direction::Increasing => F::one(),
            Direction::Decreasing => -F::one(),
        };
        return Err(RootError::NoSignChange {
            lo: lo.as_f64(),
            hi: hi.as_f64(),
            f_lo: (sign * g_lo).as_f64(),
            f_hi: (sign * g_hi).as_f64(),
        });
    }
    let two = F::lit(2.0);
    for _ in 0..problem.max_iter {
        let mid = lo + (hi - lo) / two;
        if hi - lo <= problem.abs_tol + problem.rel_tol * mid.abs() || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let g = problem.oriented(mid);
        if g.is_nan() {
            return Err(RootError::NoSignChange {
                lo: lo.as_f64(),
                hi: hi.as_f64(),
                f_lo: g_lo.as_f64(),
                f_hi: g_hi.as_f64(),
            });
        }
        if g == F::zero() {
            return Ok(mid);
        }
        if g < F::zero() {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
            g_hi = g;
        }
    }
    Err(RootError::MaxIterExceeded {
        iterations: problem.max_iter,
        lo: lo.as_f64(),
        hi: hi.as_f64(),
    })
}

/// Finds `[lo, hi] ⊂ (0, ∞)` with a sign change of a strictly monotone
/// evaluator by doubling or halving from `seed`.
pub fn expand_bracket<F: Real, E: Fn(F) -> F>(
    evaluator: E,
    seed: F,
    direction: Direction,
) -> RootResult<(F, F)> {
    if !(seed > F::zero()) || !seed.is_finite() {
        return Err(RootError::InvalidProblem("bracket seed must be positive and finite"));
    }
    let oriented = |t: F| match direction {
        Direction::Increasing => evaluator(t),
        Direction::Decreasing => -evaluator(t),
    };
    let two = F::lit(2.0);
    let g_seed = oriented(seed);
    if g_seed == F::zero() {
        return Ok((seed / two, seed * two));
    }
    let mut edge = seed;
    for _ in 0..MAX_BRACKET_STEPS {
        if g_seed < F::zero() {
            let next = edge * two;
            if oriented(next) > F::zero() {
                return Ok((edge, next));
            }
            edge = next;
        } else if g_seed > F::zero() {
            let next = edge / two;
            if oriented(next) < F::zero() {
                return Ok((next, edge));
            }
            edge = next;
        } else {
            break; // NaN
        }
    }
    Err(RootError::BracketNotFound { seed: seed.as_f64() })
}

/// Convenience: root of a strictly monotone function on `(0, ∞)`.
pub fn solve_positive<F: Real, E: Fn(F) -> F>(evaluator: E, seed: F, direction: Direction) -> RootResult<F> {
    let (lo, hi) = expand_bracket(&evaluator, seed, direction)?;
    bisect(&MonotoneRootProblem::new(&evaluator, lo, hi, direction))
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Zero-rate Black-Scholes price of the out-of-the-money side, i.e. the call
/// time value `C - (spot - strike)^+`.
pub fn black_scholes_time_value(spot: f64, strike: f64, tau: f64, vol: f64) -> f64 {
    let total = vol * tau.sqrt();
    if !(total > 0.0) {
        return 0.0;
    }
    let d1 = ((spot / strike).ln() + 0.5 * total * total) / total;
    let d2 = d1 - total;
    if strike >= spot {
        spot * normal_cdf(d1) - strike * normal_cdf(d2)
    } else {
        // put by parity
        strike * normal_cdf(-d2) - spot * normal_cdf(-d1)
    }
}

/// Zero-rate Black-Scholes call price.
pub fn black_scholes_call(spot: f64, strike: f64, tau: f64, vol: f64) -> f64 {
    (spot - strike).max(0.0) + black_scholes_time_value(spot, strike, tau, vol)
}

/// Annualized implied volatility of a zero-rate call price.
pub fn implied_vol(price: f64, strike: f64, spot: f64, tau: f64) -> RootResult<f64> {
    let intrinsic = (spot - strike).max(0.0);
    if !(price > intrinsic && price < spot) || !(tau > 0.0) {
        return Err(RootError::OutOfBand { price, lower: intrinsic, upper: spot });
    }
    let target = price - intrinsic;
    solve_positive(
        |vol| black_scholes_time_value(spot, strike, tau, vol) - target,
        1.0,
        Direction::Increasing,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_root() {
        let p = MonotoneRootProblem::new(|t: f64| t - 0.5, 0.0, 1.0, Direction::Increasing);
        assert!((bisect(&p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sinh_root_residual() {
        let f = |t: f64| 2.0 * t.sinh() - 3.0;
        let r = bisect(&MonotoneRootProblem::new(f, 0.0, 10.0, Direction::Increasing)).unwrap();
        assert!(f(r).abs() < 1e-10);
        assert!((r - 1.5f64.asinh()).abs() < 1e-11);
    }

    #[test]
    fn no_sign_change() {
        let p = MonotoneRootProblem::new(|t: f64| t, 1.0, 2.0, Direction::Increasing);
        assert!(matches!(bisect(&p), Err(RootError::NoSignChange { .. })));
    }

    #[test]
    fn decreasing_and_infinite_hi() {
        let p = MonotoneRootProblem::new(|t: f64| 1e6 - t, 0.0, f64::INFINITY, Direction::Decreasing);
        let r = bisect(&p).unwrap();
        assert!((r - 1e6).abs() < 1e-5);
    }

    #[test]
    fn max_iter_is_reported() {
        let p = MonotoneRootProblem::new(|t: f64| t - 0.3, 0.0, 1.0, Direction::Increasing).with_max_iter(3);
        assert!(matches!(bisect(&p), Err(RootError::MaxIterExceeded { .. })));
    }

    #[test]
    fn bracket_examples() {
        let (lo, hi) = expand_bracket(|t: f64| t.ln(), 1.0, Direction::Increasing).unwrap();
        assert!(lo < 1.0 && hi > 1.0);
        let (_, hi) = expand_bracket(|t: f64| t - 1e6, 1.0, Direction::Increasing).unwrap();
        assert!(hi >= 1e6);
        assert!(matches!(
            expand_bracket(|t: f64| t.exp() + 1.0, 1.0, Direction::Increasing),
            Err(RootError::BracketNotFound { .. })
        ));
        let (lo, hi) = expand_bracket(|t: f64| 1e-9 - t, 1.0, Direction::Decreasing).unwrap();
        assert!(lo < 1e-9 && hi > 1e-9);
    }

    #[test]
    fn generic_over_f32() {
        let p = MonotoneRootProblem::new(|t: f32| t * t - 2.0, 0.0f32, 2.0, Direction::Increasing)
            .with_tolerances(1e-6, 1e-6);
        assert!((bisect(&p).unwrap() - 2f32.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-15);
        assert!((normal_cdf(-5.0) - 2.866515718791939e-7).abs() < 1e-20);
    }

    #[test]
    fn implied_vol_band() {
        assert!(matches!(implied_vol(0.0, 100.0, 100.0, 1.0), Err(RootError::OutOfBand { .. })));
        assert!(matches!(implied_vol(10.0, 90.0, 100.0, 1.0), Err(RootError::OutOfBand { .. })));
        assert!(matches!(implied_vol(100.0, 100.0, 100.0, 1.0), Err(RootError::OutOfBand { .. })));
        let p = black_scholes_call(100.0, 100.0, 1.0, 0.2);
        assert!((implied_vol(p, 100.0, 100.0, 1.0).unwrap() - 0.2).abs() < 1e-8);
    }

    #[test]
    fn parity_inside_time_value() {
        // ITM call time value equals the OTM put price
        let c = black_scholes_call(100.0, 90.0, 0.5, 0.3);
        let p = black_scholes_time_value(100.0, 90.0, 0.5, 0.3);
        assert!((c - 10.0 - p).abs() < 1e-13);
    }
}
