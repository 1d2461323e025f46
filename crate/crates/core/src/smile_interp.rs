//! Exact, arbitrage-free interpolation of call prices by piecewise constant
//! LVG slices.
//!
//! Each maturity is fitted from both ends towards the spot. Between two
//! consecutive strikes at most three knots are inserted: the time value is
//! continued from the frontier `(A, B)` (value and left derivative) with one
//! free coefficient up to a switch point `w`, then with a second coefficient
//! chosen to hit the market value, and the first coefficient is tuned so the
//! derivative at the strike equals a target `B₁`. When the straight line from
//! the frontier would dip below the previous maturity's time value, an extra
//! knot `y` is placed first so the curve stays above it.
//!
//! The right half is built by running the same left-to-right procedure on
//! data reflected by `K ↦ L + U − K`.

use thiserror::Error;

use crate::market_data::{AdmissiblePrices, MaturityPrices};
use crate::numerics::{bisect, solve_positive, Direction, MonotoneRootProblem, RootError};
use crate::piecewise_exp::{segment_eval, PiecewiseError};
use crate::Slice;

/// Points sampled per slice when checking that time values increase with maturity.
pub const MONOTONICITY_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmileError {
    #[error("root search failed while {context}: {source}")]
    Root { context: &'static str, source: RootError },
    #[error(transparent)]
    Slice(#[from] PiecewiseError),
    #[error("maturity {maturity}: strike {strike} repriced with error {error:e}")]
    MatchFailure { maturity: usize, strike: f64, error: f64 },
    #[error("maturity {maturity}: time value not above the previous maturity at {strike} (difference {diff:e})")]
    MonotonicityFailure { maturity: usize, strike: f64, diff: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("internal contract violated: {0}")]
    Contract(String),
}

fn root_err(context: &'static str) -> impl FnOnce(RootError) -> SmileError {
    move |source| SmileError::Root { context, source }
}

/// Free parameters of the interpolation, each in `(0, 1)`, plus the shared `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmileParams {
    pub z: f64,
    /// Weight of linear interpolation for the synthetic spot strike.
    pub delta1: f64,
    /// Initial derivative at the lower bound.
    pub delta2: f64,
    /// Target derivatives at interior strikes.
    pub delta3: f64,
    /// Derivatives on both sides of the spot.
    pub delta4: f64,
}

impl SmileParams {
    pub fn new(z: f64) -> Self {
        Self { z, delta1: 0.5, delta2: 0.5, delta3: 0.5, delta4: 0.5 }
    }

    /// `z = √(2/t*)`.
    pub fn from_t_star(t_star: f64) -> Self {
        Self::new((2.0 / t_star).sqrt())
    }

    pub fn validate(&self) -> Result<(), SmileError> {
        if !(self.z > 0.0 && self.z.is_finite()) {
            return Err(SmileError::InvalidInput(format!("z must be positive, got {}", self.z)));
        }
        for (name, d) in [("delta1", self.delta1), ("delta2", self.delta2), ("delta3", self.delta3), ("delta4", self.delta4)] {
            if !(d > 0.0 && d < 1.0) {
                return Err(SmileError::InvalidInput(format!("{name} must lie in (0, 1), got {d}")));
            }
        }
        Ok(())
    }
}

/// Time value of the previous maturity, extended by zero outside its
/// bounds, possibly seen through the reflection `K ↦ pivot − K`.
#[derive(Debug, Clone, Copy)]
pub struct PrevCurve<'a> {
    slice: Option<&'a Slice>,
    pivot: Option<f64>,
}

impl<'a> PrevCurve<'a> {
    pub fn zero() -> Self {
        Self { slice: None, pivot: None }
    }

    pub fn direct(slice: Option<&'a Slice>) -> Self {
        Self { slice, pivot: None }
    }

    pub fn mirrored(slice: Option<&'a Slice>, pivot: f64) -> Self {
        Self { slice, pivot: Some(pivot) }
    }

    pub fn value(&self, k: f64) -> f64 {
        match (self.slice, self.pivot) {
            (None, _) => 0.0,
            (Some(s), None) => s.time_value_extended(k),
            (Some(s), Some(p)) => s.time_value_extended(p - k),
        }
    }

    pub fn right_slope(&self, k: f64) -> f64 {
        match (self.slice, self.pivot) {
            (None, _) => 0.0,
            (Some(s), None) => s.one_sided_slopes(k).1,
            (Some(s), Some(p)) => -s.one_sided_slopes(p - k).0,
        }
    }
}

/// Value and left derivative of the curve under construction at `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frontier {
    pub k: f64,
    pub value: f64,
    pub slope: f64,
}

/// Segment evaluation that maps overflow to `+∞`; every search below runs
/// over coefficients where the growing exponential dominates as `σ → 0`.
fn grow(value: f64, slope: f64, sigma: f64, z: f64, dx: f64) -> (f64, f64) {
    let (v, d) = segment_eval(value, slope, sigma, z, dx);
    (if v.is_finite() { v } else { f64::INFINITY }, if d.is_finite() { d } else { f64::INFINITY })
}

/// `B = δ₂ V̄₁/(K₁ − L) + (1 − δ₂) V⁻₊(L)`.
pub fn initial_derivative(v1: f64, k1: f64, lower: f64, prev_right_slope: f64, delta2: f64) -> f64 {
    delta2 * v1 / (k1 - lower) + (1.0 - delta2) * prev_right_slope
}

/// Blend of the forward and backward chord slopes of the time values around `k[1]`.
pub fn target_derivative(k: [f64; 3], v: [f64; 3], delta3: f64) -> f64 {
    let fwd = (v[2] - v[1]) / (k[2] - k[1]);
    let bwd = (v[1] - v[0]) / (k[1] - k[0]);
    delta3 * fwd + (1.0 - delta3) * bwd
}

/// Left derivative at the spot `k[1]`; the right derivative is this minus one.
pub fn spot_left_derivative(k: [f64; 3], v: [f64; 3], delta4: f64) -> f64 {
    delta4 + target_derivative(k, v, delta4)
}

/// Abscissa where the line through `(kj, a)` with slope `b` meets the line
/// through `(kn, vn)` with slope `b1`.
pub fn intersection_w(a: f64, b: f64, b1: f64, kj: f64, kn: f64, vn: f64) -> f64 {
    (vn + b * kj - a - b1 * kn) / (b - b1)
}

/// First point after `kj` where the line `a + b (K − kj)` meets the previous
/// time value, or `kn` if it stays above it on `(kj, kn]`.
pub fn crossing_y(a: f64, b: f64, kj: f64, kn: f64, prev: &PrevCurve) -> Result<f64, SmileError> {
    if a + b * (kn - kj) >= prev.value(kn) {
        return Ok(kn);
    }
    // at a bound shared with the previous maturity both curves start at zero;
    // the frontier then has to leave with a steeper slope
    let above = a - prev.value(kj);
    if !(above > 0.0 || (above == 0.0 && b > prev.right_slope(kj))) {
        return Err(SmileError::Contract(format!("frontier value {a} not above previous time value at {kj}")));
    }
    // b minus the chord slope from (kj, a) to the previous curve: strictly
    // decreasing for a convex previous curve lying below the frontier.
    let h = |y: f64| {
        if y <= kj {
            f64::INFINITY
        } else {
            b - (prev.value(y) - a) / (y - kj)
        }
    };
    bisect(&MonotoneRootProblem::new(h, kj, kn, Direction::Decreasing)).map_err(root_err("locating the crossing point"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseA {
    pub w: f64,
    pub sigma_bar: f64,
    pub sigma_tilde: f64,
    /// State at the next strike.
    pub next: Frontier,
}

/// Extends the curve from `front` through `w` to `kn`, matching value `vn`
/// and left derivative `b1` at `kn`.
pub fn extend_case_a(front: Frontier, w: f64, kn: f64, vn: f64, b1: f64, z: f64) -> Result<CaseA, SmileError> {
    let (d1, d2) = (w - front.k, kn - w);
    if !(d1 >= 0.0 && d2 > 0.0) {
        return Err(SmileError::Contract(format!("switch point {w} outside [{}, {kn})", front.k)));
    }
    let seed = z * (kn - front.k);
    let at_w = |sigma: f64| grow(front.value, front.slope, sigma, z, d1);
    let line_gap = |sigma: f64| {
        let (a, b) = at_w(sigma);
        a + b * d2 - vn
    };
    let sigma_hat = solve_positive(line_gap, seed, Direction::Decreasing).map_err(root_err("solving for sigma-hat"))?;
    let inner = |a: f64, b: f64| {
        solve_positive(|s: f64| grow(a, b, s, z, d2).0 - vn, seed, Direction::Decreasing)
    };
    let outer = |s: f64| {
        let (a, b) = at_w(sigma_hat + s);
        match inner(a, b) {
            Ok(st) => grow(a, b, st, z, d2).1 - b1,
            // numerically at the linear limit
            Err(_) => b - b1,
        }
    };
    let s = solve_positive(outer, seed, Direction::Increasing).map_err(root_err("solving for sigma-bar"))?;
    let sigma_bar = sigma_hat + s;
    let (a, b) = at_w(sigma_bar);
    let sigma_tilde = inner(a, b).map_err(root_err("solving for sigma-tilde"))?;
    let (value, slope) = segment_eval(a, b, sigma_tilde, z, d2);
    Ok(CaseA { w, sigma_bar, sigma_tilde, next: Frontier { k: kn, value, slope } })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseB {
    pub y: f64,
    pub sigma_bar: f64,
    /// State at `y`.
    pub next: Frontier,
}

/// Places a knot at `y` with the coefficient whose tangent at `y` passes
/// through the previous time value at `kn`.
pub fn extend_case_b(front: Frontier, y: f64, kn: f64, prev_at_kn: f64, z: f64) -> Result<CaseB, SmileError> {
    let (d1, d2) = (y - front.k, kn - y);
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(SmileError::Contract(format!("crossing point {y} outside ({}, {kn})", front.k)));
    }
    let gap = |sigma: f64| {
        let (a, b) = grow(front.value, front.slope, sigma, z, d1);
        a + b * d2 - prev_at_kn
    };
    let sigma_bar = solve_positive(gap, z * (kn - front.k), Direction::Decreasing).map_err(root_err("solving case-b sigma"))?;
    let (value, slope) = segment_eval(front.value, front.slope, sigma_bar, z, d1);
    Ok(CaseB { y, sigma_bar, next: Frontier { k: y, value, slope } })
}

/// Knots and coefficients of one branch, from the lower bound to the spot.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfBranch {
    pub knots: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub end: Frontier,
}

/// Runs the strike recursion over `nodes[0] = L < … < nodes[n] = x` with
/// time values `values` (`values[0] = 0`), finishing with left derivative
/// `final_slope` at the spot.
pub fn build_half_branch(
    nodes: &[f64],
    values: &[f64],
    final_slope: f64,
    params: &SmileParams,
    prev: &PrevCurve,
) -> Result<HalfBranch, SmileError> {
    let n = nodes.len() - 1;
    if n < 1 || values.len() != nodes.len() {
        return Err(SmileError::InvalidInput("need at least the bound and the spot".into()));
    }
    let z = params.z;
    let mut knots = vec![nodes[0]];
    let mut sigmas = Vec::new();
    let mut front = Frontier {
        k: nodes[0],
        value: values[0],
        slope: initial_derivative(values[1], nodes[1], nodes[0], prev.right_slope(nodes[0]), params.delta2),
    };
    for j in 0..n {
        let (kn, vn) = (nodes[j + 1], values[j + 1]);
        let b1 = if j + 1 == n {
            final_slope
        } else {
            target_derivative([nodes[j], kn, nodes[j + 2]], [values[j], vn, values[j + 2]], params.delta3)
        };
        let y = crossing_y(front.value, front.slope, front.k, kn, prev)?;
        let mut w = intersection_w(front.value, front.slope, b1, front.k, kn, vn);
        if w > y {
            let b = extend_case_b(front, y, kn, prev.value(kn), z)?;
            knots.push(b.y);
            sigmas.push(b.sigma_bar);
            front = b.next;
            w = intersection_w(front.value, front.slope, b1, front.k, kn, vn);
        }
        if !(w > front.k && w < kn) {
            return Err(SmileError::Contract(format!("switch point {w} outside ({}, {kn})", front.k)));
        }
        let a = extend_case_a(front, w, kn, vn, b1, z)?;
        knots.extend([a.w, kn]);
        sigmas.extend([a.sigma_bar, a.sigma_tilde]);
        front = a.next;
    }
    Ok(HalfBranch { knots, sigmas, end: front })
}

/// Call price inserted at the spot when it is not a strike. Returns the
/// insertion index into `strikes` and the price.
///
/// The price blends the chord through the neighbouring strikes with a lower
/// bound keeping the augmented graph strictly decreasing, strictly convex and
/// above the previous maturity.
pub fn insert_spot_strike(m: &MaturityPrices, spot: f64, prev: Option<&Slice>, delta1: f64) -> Option<(usize, f64)> {
    if m.strikes.contains(&spot) {
        return None;
    }
    let (k, c) = m.augmented(spot);
    // spot lies in (k[j], k[j+1])
    let j = k.partition_point(|&v| v < spot) - 1;
    let t = (spot - k[j]) / (k[j + 1] - k[j]);
    let chord = c[j] + t * (c[j + 1] - c[j]);
    let line = |a: usize, b: usize| c[a] + (c[b] - c[a]) / (k[b] - k[a]) * (spot - k[a]);
    let mut lower = PrevCurve::direct(prev).value(spot).max(c[j + 1]);
    if j >= 1 {
        lower = lower.max(line(j - 1, j));
    }
    if j + 2 < k.len() {
        lower = lower.max(line(j + 1, j + 2));
    }
    Some((j, delta1 * chord + (1.0 - delta1) * lower))
}

/// One calibrated maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceFit {
    pub slice: Slice,
    /// Synthetic call price at the spot when the spot was not quoted.
    pub spot_price: Option<f64>,
}

/// Fits one maturity given the previous maturity's slice.
pub fn interpolate_slice(m: &MaturityPrices, spot: f64, prev: Option<&Slice>, params: &SmileParams) -> Result<SliceFit, SmileError> {
    params.validate()?;
    let (lower, upper) = (m.lower, m.upper);
    if !(lower < spot && spot < upper) {
        return Err(SmileError::InvalidInput(format!("spot {spot} outside ({lower}, {upper})")));
    }
    let mut strikes = m.strikes.clone();
    let mut prices = m.prices.clone();
    let spot_price = insert_spot_strike(m, spot, prev, params.delta1).map(|(j, p)| {
        strikes.insert(j, spot);
        prices.insert(j, p);
        p
    });
    let mut nodes = vec![lower];
    nodes.extend_from_slice(&strikes);
    nodes.push(upper);
    let mut values = vec![0.0];
    values.extend(strikes.iter().zip(&prices).map(|(&k, &c)| c - (spot - k).max(0.0)));
    values.push(0.0);
    let s = nodes.iter().position(|&k| k == spot).expect("spot inserted above");

    let b1 = spot_left_derivative([nodes[s - 1], nodes[s], nodes[s + 1]], [values[s - 1], values[s], values[s + 1]], params.delta4);
    let b2 = b1 - 1.0;

    let left = build_half_branch(&nodes[..=s], &values[..=s], b1, params, &PrevCurve::direct(prev))?;

    let pivot = lower + upper;
    let r_nodes: Vec<f64> = nodes[s..].iter().rev().map(|&k| pivot - k).collect();
    let r_values: Vec<f64> = values[s..].iter().rev().copied().collect();
    let right = build_half_branch(&r_nodes, &r_values, -b2, params, &PrevCurve::mirrored(prev, pivot))?;

    let mut knots = left.knots;
    knots.extend(right.knots.iter().rev().skip(1).map(|&k| pivot - k));
    let mut sigmas = left.sigmas;
    sigmas.extend(right.sigmas.iter().rev());
    // exact bounds, whatever rounding the reflection introduced
    *knots.last_mut().expect("non-empty") = upper;
    let slice = Slice::new(params.z, spot, knots, sigmas)?;
    Ok(SliceFit { slice, spot_price })
}

/// Largest absolute repricing error of `slice` over the quoted strikes.
pub fn repricing_error(slice: &Slice, m: &MaturityPrices) -> Result<(f64, f64), PiecewiseError> {
    let mut worst = (0.0, f64::NAN);
    for (&k, &c) in m.strikes.iter().zip(&m.prices) {
        let e = (slice.call_price(k)? - c).abs();
        if !(e <= worst.0) {
            worst = (e, k);
        }
    }
    Ok(worst)
}

/// Tolerance used to accept a repriced value.
pub fn match_tolerance(spot: f64, m: &MaturityPrices) -> f64 {
    1e-9 * spot.abs().max(m.upper - m.lower)
}

/// Fits every maturity in order, checking exact repricing and that time
/// values increase with maturity.
pub fn interpolate_surface(prices: &AdmissiblePrices, params: &SmileParams) -> Result<Vec<SliceFit>, SmileError> {
    params.validate()?;
    let spot = prices.spot();
    let mut fits: Vec<SliceFit> = Vec::with_capacity(prices.maturities().len());
    for (i, m) in prices.maturities().iter().enumerate() {
        let prev = fits.last().map(|f| &f.slice);
        let fit = interpolate_slice(m, spot, prev, params)?;
        let (err, strike) = repricing_error(&fit.slice, m)?;
        if !(err <= match_tolerance(spot, m)) {
            return Err(SmileError::MatchFailure { maturity: i, strike, error: err });
        }
        if let Some(p) = prev {
            check_monotone(i, &fit.slice, p)?;
        }
        fits.push(fit);
    }
    Ok(fits)
}

/// Minimum of `V^i − V^{i−1}` over an interior sampling grid, with the
/// strike where it occurs.
pub fn min_time_value_increase(slice: &Slice, prev: &Slice, samples: usize) -> (f64, f64) {
    let (lo, hi) = (slice.lower(), slice.upper());
    let mut worst = (f64::INFINITY, lo);
    for s in 1..=samples {
        let k = lo + (hi - lo) * s as f64 / (samples + 1) as f64;
        let d = slice.time_value_extended(k) - prev.time_value_extended(k);
        if d < worst.0 {
            worst = (d, k);
        }
    }
    worst
}

fn check_monotone(maturity: usize, slice: &Slice, prev: &Slice) -> Result<(), SmileError> {
    let (diff, strike) = min_time_value_increase(slice, prev, MONOTONICITY_SAMPLES);
    if !(diff > 0.0) {
        return Err(SmileError::MonotonicityFailure { maturity, strike, diff });
    }
    Ok(())
}
