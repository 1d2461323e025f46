//! Closed-form time values of LVG models with piecewise constant diffusion
//! coefficients.
//!
//! On a segment with coefficient `σ` the time value solves
//! `σ² V'' = z² V`, so it is a combination of `e^{±zK/σ}`. Each segment is
//! stored by its value `A` and slope `B` at the left knot:
//!
//! ```text
//! V(K) = A cosh(z (K - ν)/σ) + (σ B / z) sinh(z (K - ν)/σ)
//! ```
//!
//! which is the same curve as the global `c¹ e^{-Kz/σ} + c² e^{Kz/σ}` form
//! but never multiplies a huge exponential by a tiny coefficient. Passing
//! from one segment to the next is plain C¹ matching of `(A, B)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PiecewiseError {
    #[error("strike {k} outside [{lo}, {hi}]")]
    OutOfDomain { k: f64, lo: f64, hi: f64 },
    #[error("degenerate branch at spot: v1={v1}, d1={d1}, v2={v2}, d2={d2}")]
    DegenerateBranch { v1: f64, d1: f64, v2: f64, d2: f64 },
    #[error("invalid slice parameters: {0}")]
    InvalidParameters(String),
}

/// Value and slope after moving `dx` along a segment that starts at
/// `(value, slope)`. Negative `dx` walks the segment backwards.
#[inline]
pub fn segment_eval<F: Real>(value: F, slope: F, sigma: F, z: F, dx: F) -> (F, F) {
    let arg = z * dx / sigma;
    let (sh, ch) = (arg.sinh(), arg.cosh());
    (value * ch + sigma * slope / z * sh, z * value / sigma * sh + slope * ch)
}

/// Carries `(A, B)` from the left knot of a segment to its right knot; the
/// result is the `(A, B)` of the next segment.
#[inline]
pub fn propagate_up<F: Real>(value: F, slope: F, width: F, sigma: F, z: F) -> (F, F) {
    segment_eval(value, slope, sigma, z, width)
}

/// Mirror of [`propagate_up`]: from the right knot of a segment to its left knot.
#[inline]
pub fn propagate_down<F: Real>(value: F, slope: F, width: F, sigma: F, z: F) -> (F, F) {
    segment_eval(value, slope, sigma, z, -width)
}

/// One branch of a time value: a C¹ solution of `σ_j² V'' = z² V` on
/// `[ν_0, ν_{n+1}]` with piecewise constant `σ_j`.
///
/// Each segment is evaluated from the end the branch was built from, so a
/// solution decaying away from its anchor never subtracts large terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpBranch<F> {
    knots: Vec<F>,
    sigmas: Vec<F>,
    starts: Vec<(F, F)>,
    ends: Vec<(F, F)>,
    anchored_right: bool,
    z: F,
}

fn validate_partition<F: Real>(knots: &[F], sigmas: &[F], z: F) -> Result<(), PiecewiseError> {
    if knots.len() < 2 || sigmas.len() + 1 != knots.len() {
        return Err(PiecewiseError::InvalidParameters(format!(
            "need n+1 knots for n segments, got {} knots and {} sigmas",
            knots.len(),
            sigmas.len()
        )));
    }
    if !(z > F::zero()) || !z.is_finite() {
        return Err(PiecewiseError::InvalidParameters(format!("z must be positive, got {z}")));
    }
    if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(PiecewiseError::InvalidParameters("knots must be finite and strictly increasing".into()));
    }
    if sigmas.iter().any(|s| !(*s > F::zero()) || !s.is_finite()) {
        return Err(PiecewiseError::InvalidParameters("sigmas must be positive and finite".into()));
    }
    Ok(())
}

impl<F: Real> ExpBranch<F> {
    /// Branch with prescribed value and slope at the left end.
    pub fn from_left(knots: Vec<F>, sigmas: Vec<F>, z: F, value: F, slope: F) -> Result<Self, PiecewiseError> {
        validate_partition(&knots, &sigmas, z)?;
        let mut starts = Vec::with_capacity(sigmas.len());
        let mut ends = Vec::with_capacity(sigmas.len());
        let (mut a, mut b) = (value, slope);
        for (j, &s) in sigmas.iter().enumerate() {
            starts.push((a, b));
            (a, b) = propagate_up(a, b, knots[j + 1] - knots[j], s, z);
            ends.push((a, b));
        }
        Ok(Self { knots, sigmas, starts, ends, anchored_right: false, z })
    }

    /// Branch with prescribed value and slope at the right end.
    pub fn from_right(knots: Vec<F>, sigmas: Vec<F>, z: F, value: F, slope: F) -> Result<Self, PiecewiseError> {
        validate_partition(&knots, &sigmas, z)?;
        let n = sigmas.len();
        let mut starts = vec![(F::zero(), F::zero()); n];
        let mut ends = vec![(F::zero(), F::zero()); n];
        let (mut v, mut d) = (value, slope);
        for j in (0..n).rev() {
            ends[j] = (v, d);
            (v, d) = propagate_down(v, d, knots[j + 1] - knots[j], sigmas[j], z);
            starts[j] = (v, d);
        }
        Ok(Self { knots, sigmas, starts, ends, anchored_right: true, z })
    }

    /// `V¹(1, ·)`: zero at the left end, `λ = 1` normalisation
    /// (`2 sinh(z (K - ν_0)/σ_1)` on the first segment).
    pub fn unit_left(knots: Vec<F>, sigmas: Vec<F>, z: F) -> Result<Self, PiecewiseError> {
        let s0 = *sigmas.first().ok_or_else(|| PiecewiseError::InvalidParameters("empty sigmas".into()))?;
        let two = F::lit(2.0);
        Self::from_left(knots, sigmas, z, F::zero(), two * z / s0)
    }

    /// `V²(1, ·)`: zero at the right end, `2 sinh(z (ν_{n+1} - K)/σ_{n+1})` on the last segment.
    pub fn unit_right(knots: Vec<F>, sigmas: Vec<F>, z: F) -> Result<Self, PiecewiseError> {
        let s1 = *sigmas.last().ok_or_else(|| PiecewiseError::InvalidParameters("empty sigmas".into()))?;
        let two = F::lit(2.0);
        Self::from_right(knots, sigmas, z, F::zero(), -two * z / s1)
    }

    pub fn scaled(&self, factor: F) -> Self {
        let mut out = self.clone();
        for st in out.starts.iter_mut().chain(out.ends.iter_mut()) {
            st.0 = st.0 * factor;
            st.1 = st.1 * factor;
        }
        out
    }

    pub fn knots(&self) -> &[F] {
        &self.knots
    }

    pub fn sigmas(&self) -> &[F] {
        &self.sigmas
    }

    /// `(A_j, B_j)` per segment.
    pub fn segment_starts(&self) -> &[(F, F)] {
        &self.starts
    }

    pub fn z(&self) -> F {
        self.z
    }

    pub fn lower(&self) -> F {
        self.knots[0]
    }

    pub fn upper(&self) -> F {
        self.knots[self.knots.len() - 1]
    }

    /// Segment containing `k` under the closed-left convention; the right end
    /// belongs to the last segment.
    pub fn segment_index(&self, k: F) -> Option<usize> {
        if !(k >= self.lower() && k <= self.upper()) {
            return None;
        }
        let n = self.sigmas.len();
        // first knot strictly greater than k
        let pos = self.knots.partition_point(|&v| v <= k);
        Some(pos.saturating_sub(1).min(n - 1))
    }

    pub fn sigma_at(&self, k: F) -> Result<F, PiecewiseError> {
        self.segment_index(k).map(|j| self.sigmas[j]).ok_or_else(|| self.out_of_domain(k))
    }

    /// Value and slope at `k`, right-segment values at interior knots.
    pub fn eval(&self, k: F) -> Result<(F, F), PiecewiseError> {
        let j = self.segment_index(k).ok_or_else(|| self.out_of_domain(k))?;
        if self.anchored_right {
            let (a, b) = self.ends[j];
            Ok(segment_eval(a, b, self.sigmas[j], self.z, k - self.knots[j + 1]))
        } else {
            let (a, b) = self.starts[j];
            Ok(segment_eval(a, b, self.sigmas[j], self.z, k - self.knots[j]))
        }
    }

    /// Value and slope at the right end.
    pub fn end_state(&self) -> (F, F) {
        self.ends[self.ends.len() - 1]
    }

    pub fn start_state(&self) -> (F, F) {
        self.starts[0]
    }

    fn out_of_domain(&self, k: F) -> PiecewiseError {
        PiecewiseError::OutOfDomain { k: k.as_f64(), lo: self.lower().as_f64(), hi: self.upper().as_f64() }
    }
}

/// Scalings `(λ₁, λ₂)` making `λ₁V¹` and `λ₂V²` agree at the spot with a
/// slope drop of exactly one:
/// `λ₁ v1 = λ₂ v2` and `λ₁ d1 = λ₂ d2 + 1`.
pub fn solve_lambda_pair<F: Real>(v1: F, d1: F, v2: F, d2: F) -> Result<(F, F), PiecewiseError> {
    if !(v1 > F::zero() && v2 > F::zero() && d1 > F::zero() && d2 < F::zero()) {
        return Err(PiecewiseError::DegenerateBranch { v1: v1.as_f64(), d1: d1.as_f64(), v2: v2.as_f64(), d2: d2.as_f64() });
    }
    let l1 = v2 / (d1 * v2 - d2 * v1);
    Ok((l1, l1 * v1 / v2))
}

/// Serialized form of a slice; the branch coefficients are derived data and
/// are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub z: f64,
    pub x: f64,
    #[serde(rename = "L")]
    pub lower: f64,
    #[serde(rename = "U")]
    pub upper: f64,
    pub nu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Call prices of one maturity produced by an LVG model with piecewise
/// constant coefficient `σ` on the partition `ν` of `[L, U]`, spot `x` and
/// characteristic time `2/z²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice<F> {
    z: F,
    x: F,
    nu: Vec<F>,
    sigma: Vec<F>,
    left: ExpBranch<F>,
    right: ExpBranch<F>,
    lambda: (F, F),
}

impl<F: Real> Slice<F> {
    pub fn new(z: F, x: F, nu: Vec<F>, sigma: Vec<F>) -> Result<Self, PiecewiseError> {
        validate_partition(&nu, &sigma, z)?;
        let (lower, upper) = (nu[0], nu[nu.len() - 1]);
        if !(x > lower && x < upper) {
            return Err(PiecewiseError::InvalidParameters(format!("spot {x} outside ({lower}, {upper})")));
        }
        let below = nu.partition_point(|&v| v < x);
        let above = nu.partition_point(|&v| v <= x);
        let mut left_knots = nu[..below].to_vec();
        left_knots.push(x);
        let left_sigmas = sigma[..below].to_vec();
        let mut right_knots = vec![x];
        right_knots.extend_from_slice(&nu[above..]);
        let right_sigmas = sigma[above - 1..].to_vec();

        let left = ExpBranch::unit_left(left_knots, left_sigmas, z)?;
        let right = ExpBranch::unit_right(right_knots, right_sigmas, z)?;
        let (v1, d1) = left.end_state();
        let (v2, d2) = right.start_state();
        let lambda = solve_lambda_pair(v1, d1, v2, d2)?;
        Ok(Self { z, x, left: left.scaled(lambda.0), right: right.scaled(lambda.1), nu, sigma, lambda })
    }

    pub fn from_spec(spec: &SliceSpec) -> Result<Self, PiecewiseError> {
        let to = |v: &[f64]| v.iter().map(|&a| F::lit(a)).collect::<Vec<_>>();
        let nu = to(&spec.nu);
        if nu.first().map(|v| v.as_f64()) != Some(spec.lower) || nu.last().map(|v| v.as_f64()) != Some(spec.upper) {
            return Err(PiecewiseError::InvalidParameters("L and U must equal the first and last knot".into()));
        }
        Self::new(F::lit(spec.z), F::lit(spec.x), nu, to(&spec.sigma))
    }

    pub fn spec(&self) -> SliceSpec {
        SliceSpec {
            z: self.z.as_f64(),
            x: self.x.as_f64(),
            lower: self.lower().as_f64(),
            upper: self.upper().as_f64(),
            nu: self.nu.iter().map(|v| v.as_f64()).collect(),
            sigma: self.sigma.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn z(&self) -> F {
        self.z
    }

    pub fn spot(&self) -> F {
        self.x
    }

    pub fn lower(&self) -> F {
        self.nu[0]
    }

    pub fn upper(&self) -> F {
        self.nu[self.nu.len() - 1]
    }

    pub fn knots(&self) -> &[F] {
        &self.nu
    }

    pub fn sigmas(&self) -> &[F] {
        &self.sigma
    }

    pub fn interior_knot_count(&self) -> usize {
        self.nu.len() - 2
    }

    pub fn lambdas(&self) -> (F, F) {
        self.lambda
    }

    /// Characteristic time `2/z²` at which this slice prices calls.
    pub fn t_star(&self) -> F {
        F::lit(2.0) / (self.z * self.z)
    }

    pub fn left_branch(&self) -> &ExpBranch<F> {
        &self.left
    }

    pub fn right_branch(&self) -> &ExpBranch<F> {
        &self.right
    }

    fn check_domain(&self, k: F) -> Result<(), PiecewiseError> {
        if k >= self.lower() && k <= self.upper() {
            Ok(())
        } else {
            Err(PiecewiseError::OutOfDomain { k: k.as_f64(), lo: self.lower().as_f64(), hi: self.upper().as_f64() })
        }
    }

    /// Time value and slope; at the spot the right-hand slope is returned.
    pub fn time_value_and_slope(&self, k: F) -> Result<(F, F), PiecewiseError> {
        self.check_domain(k)?;
        if k < self.x {
            self.left.eval(k)
        } else {
            self.right.eval(k)
        }
    }

    pub fn time_value(&self, k: F) -> Result<F, PiecewiseError> {
        self.time_value_and_slope(k).map(|(v, _)| v)
    }

    /// Time value extended by zero outside `[L, U]`.
    pub fn time_value_extended(&self, k: F) -> F {
        self.time_value(k).unwrap_or(F::zero())
    }

    /// Left and right derivatives of the zero-extended time value.
    pub fn one_sided_slopes(&self, k: F) -> (F, F) {
        let (lo, hi) = (self.lower(), self.upper());
        if k < lo || k > hi {
            return (F::zero(), F::zero());
        }
        if k == lo {
            return (F::zero(), self.left.start_state().1);
        }
        if k == hi {
            return (self.right.end_state().1, F::zero());
        }
        if k == self.x {
            return (self.left.end_state().1, self.right.start_state().1);
        }
        let d = self.time_value_and_slope(k).map(|(_, d)| d).unwrap_or(F::zero());
        (d, d)
    }

    pub fn left_slope_at_spot(&self) -> F {
        self.left.end_state().1
    }

    pub fn right_slope_at_spot(&self) -> F {
        self.right.start_state().1
    }

    /// Diffusion coefficient at `k` (right limit at knots).
    pub fn sigma_at(&self, k: F) -> Result<F, PiecewiseError> {
        self.check_domain(k)?;
        let n = self.sigma.len();
        let pos = self.nu.partition_point(|&v| v <= k);
        Ok(self.sigma[pos.saturating_sub(1).min(n - 1)])
    }

    pub fn call_price(&self, k: F) -> Result<F, PiecewiseError> {
        let v = self.time_value(k)?;
        Ok(v + (self.x - k).max(F::zero()))
    }

    /// `∂²C/∂K² = z² V / σ²`, the density of the underlying at the
    /// characteristic time on `(L, U)`.
    pub fn density(&self, k: F) -> Result<F, PiecewiseError> {
        let v = self.time_value(k)?;
        let s = self.sigma_at(k)?;
        Ok(self.z * self.z * v / (s * s))
    }

    /// The slice obtained by the change of variables `K ↦ L + U - K`.
    pub fn reflected(&self) -> Result<Self, PiecewiseError> {
        let (lo, hi) = (self.lower(), self.upper());
        let nu = self.nu.iter().rev().map(|&v| lo + hi - v).collect();
        let sigma = self.sigma.iter().rev().copied().collect();
        Self::new(self.z, lo + hi - self.x, nu, sigma)
    }
}
