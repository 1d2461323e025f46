//! The calibrated non-homogeneous model: one slice per maturity, local
//! variances between maturities, JSON persistence and coefficient coarsening.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::AdmissiblePrices;
use crate::piecewise_exp::PiecewiseError;
use crate::smile_interp::{interpolate_surface, SmileError, SmileParams};
use crate::Slice;

/// Sampling points per interval for the positivity check done on assembly.
pub const ASSEMBLY_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurfaceError {
    #[error("nesting violation: {0}")]
    NestingViolation(String),
    #[error("strike {k} outside ({lo}, {hi})")]
    OutOfDomain { k: f64, lo: f64, hi: f64 },
    #[error("non-positive density at strike {k}")]
    DegenerateDensity { k: f64 },
    #[error("local variance not positive and finite at strike {k} in interval {m}")]
    DegenerateLocalVariance { m: usize, k: f64 },
    #[error("maturity index {0} out of range")]
    NoSuchMaturity(usize),
    #[error(transparent)]
    Slice(#[from] PiecewiseError),
    #[error(transparent)]
    Smile(#[from] SmileError),
    #[error("invalid model file: {0}")]
    Json(String),
}

/// Serialized slice inside a model file; `z` and `x` are shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub nu: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(rename = "L")]
    pub lower: f64,
    #[serde(rename = "U")]
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub z: f64,
    pub x: f64,
    pub maturities: Vec<f64>,
    pub slices: Vec<SliceRecord>,
}

/// LVG dynamics that are homogeneous on each `(T_{m−1}, T_m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonHomLvgModel {
    z: f64,
    x: f64,
    maturities: Vec<f64>,
    slices: Vec<Slice>,
}

/// Interpolates every maturity of `prices` and assembles the model.
pub fn calibrate_model(prices: &AdmissiblePrices, params: &SmileParams) -> Result<NonHomLvgModel, SurfaceError> {
    let fits = interpolate_surface(prices, params)?;
    let maturities = prices.maturities().iter().map(|m| m.years).collect();
    assemble_model(fits.into_iter().map(|f| f.slice).collect(), maturities)
}

pub fn assemble_model(slices: Vec<Slice>, maturities: Vec<f64>) -> Result<NonHomLvgModel, SurfaceError> {
    let nest = |msg: String| Err(SurfaceError::NestingViolation(msg));
    if slices.is_empty() || slices.len() != maturities.len() {
        return nest(format!("{} slices for {} maturities", slices.len(), maturities.len()));
    }
    if !(maturities[0] > 0.0) || maturities.windows(2).any(|w| !(w[0] < w[1])) {
        return nest("maturities must be positive and strictly increasing".into());
    }
    let (z, x) = (slices[0].z(), slices[0].spot());
    for (m, s) in slices.iter().enumerate() {
        if s.z() != z || s.spot() != x {
            return nest(format!("slice {m} has a different z or spot"));
        }
        if m > 0 {
            let p = &slices[m - 1];
            if s.lower() > p.lower() || s.upper() < p.upper() {
                return nest(format!("bounds of slice {m} do not contain those of slice {}", m - 1));
            }
        }
    }
    let model = NonHomLvgModel { z, x, maturities, slices };
    for m in 0..model.slices.len() {
        let (lo, hi) = model.bounds(m);
        for s in 1..=ASSEMBLY_SAMPLES {
            let k = lo + (hi - lo) * s as f64 / (ASSEMBLY_SAMPLES + 1) as f64;
            let a2 = model.local_variance(m, k)?;
            if !(a2 > 0.0 && a2.is_finite()) {
                return Err(SurfaceError::DegenerateLocalVariance { m, k });
            }
        }
    }
    Ok(model)
}

impl NonHomLvgModel {
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn spot(&self) -> f64 {
        self.x
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn bounds(&self, m: usize) -> (f64, f64) {
        (self.slices[m].lower(), self.slices[m].upper())
    }

    /// `T_m − T_{m−1}` with `T_{−1} = 0`.
    pub fn t_star(&self, m: usize) -> f64 {
        self.maturities[m] - if m == 0 { 0.0 } else { self.maturities[m - 1] }
    }

    /// Model call price at maturity index `m`.
    pub fn call_price(&self, m: usize, k: f64) -> Result<f64, SurfaceError> {
        let s = self.slices.get(m).ok_or(SurfaceError::NoSuchMaturity(m))?;
        Ok(s.call_price(k)?)
    }

    /// Time value of the maturity before `m`; zero before the first one.
    fn prev_time_value(&self, m: usize, k: f64) -> f64 {
        if m == 0 {
            0.0
        } else {
            self.slices[m - 1].time_value_extended(k)
        }
    }

    /// `a²_m(K) = (2/t*_m)(V^m − V^{m−1}) σ_m(K)² / (z² V^m)` on `(L_m, U_m)`,
    /// right limit at knots.
    pub fn local_variance(&self, m: usize, k: f64) -> Result<f64, SurfaceError> {
        let s = self.slices.get(m).ok_or(SurfaceError::NoSuchMaturity(m))?;
        if !(k > s.lower() && k < s.upper()) {
            return Err(SurfaceError::OutOfDomain { k, lo: s.lower(), hi: s.upper() });
        }
        let v = s.time_value(k)?;
        let sigma = s.sigma_at(k)?;
        let dv = v - self.prev_time_value(m, k);
        Ok(2.0 / self.t_star(m) * dv * sigma * sigma / (self.z * self.z * v))
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            z: self.z,
            x: self.x,
            maturities: self.maturities.clone(),
            slices: self
                .slices
                .iter()
                .map(|s| SliceRecord { nu: s.knots().to_vec(), sigma: s.sigmas().to_vec(), lower: s.lower(), upper: s.upper() })
                .collect(),
        }
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self, SurfaceError> {
        let mut slices = Vec::with_capacity(spec.slices.len());
        for (m, r) in spec.slices.iter().enumerate() {
            if r.nu.first() != Some(&r.lower) || r.nu.last() != Some(&r.upper) {
                return Err(SurfaceError::Json(format!("slice {m}: L and U must be the first and last knot")));
            }
            slices.push(Slice::new(spec.z, spec.x, r.nu.clone(), r.sigma.clone())?);
        }
        assemble_model(slices, spec.maturities.clone())
    }

    /// Pretty JSON; floats are written in shortest round-trip form so a
    /// reload reproduces the model exactly.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.spec()).expect("model spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SurfaceError> {
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| SurfaceError::Json(e.to_string()))?;
        Self::from_spec(&spec)
    }

    /// Model whose slice coefficients are replaced by their coarsened versions
    /// on `bins_per_slice` equal bins.
    pub fn coarsened(&self, bins_per_slice: usize) -> Result<Self, SurfaceError> {
        let mut slices = Vec::with_capacity(self.slices.len());
        for s in &self.slices {
            let a2 = PiecewiseConstant::new(s.knots().to_vec(), s.sigmas().iter().map(|v| v * v).collect())?;
            let coarse = coarsen_coefficient(&a2, &equal_bins(s.lower(), s.upper(), bins_per_slice));
            let sigma = coarse.values.iter().map(|v| v.sqrt()).collect();
            slices.push(Slice::new(self.z, self.x, coarse.knots, sigma)?);
        }
        assemble_model(slices, self.maturities.clone())
    }
}

/// Call price curve with an analytic second strike derivative.
pub trait CallCurve {
    fn spot(&self) -> f64;
    fn call_price(&self, k: f64) -> f64;
    fn second_derivative(&self, k: f64) -> f64;
}

impl CallCurve for Slice {
    fn spot(&self) -> f64 {
        Slice::spot(self)
    }

    fn call_price(&self, k: f64) -> f64 {
        Slice::call_price(self, k).unwrap_or(f64::NAN)
    }

    fn second_derivative(&self, k: f64) -> f64 {
        self.density(k).unwrap_or(f64::NAN)
    }
}

/// `a²(K) = (2/τ*)(C(K) − (x−K)⁺)/C''(K)` for a single smile observed at `τ*`.
#[derive(Debug, Clone, Copy)]
pub struct SmileLocalVariance<'a, C> {
    curve: &'a C,
    tau_star: f64,
}

pub fn single_smile_calibration<C: CallCurve>(curve: &C, tau_star: f64) -> SmileLocalVariance<'_, C> {
    SmileLocalVariance { curve, tau_star }
}

impl<C: CallCurve> SmileLocalVariance<'_, C> {
    pub fn a2(&self, k: f64) -> Result<f64, SurfaceError> {
        let d2 = self.curve.second_derivative(k);
        if !(d2 > 0.0) {
            return Err(SurfaceError::DegenerateDensity { k });
        }
        let tv = self.curve.call_price(k) - (self.curve.spot() - k).max(0.0);
        Ok(2.0 / self.tau_star * tv / d2)
    }

    /// Checks the density on `n` interior points of `(lo, hi)`.
    pub fn check_grid(&self, lo: f64, hi: f64, n: usize) -> Result<(), SurfaceError> {
        for i in 1..=n {
            self.a2(lo + (hi - lo) * i as f64 / (n + 1) as f64)?;
        }
        Ok(())
    }
}

/// Piecewise constant function on `knots[0] < … < knots[n]`, closed-left.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, PiecewiseError> {
        if knots.len() != values.len() + 1 || values.is_empty() || knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PiecewiseError::InvalidParameters("need increasing knots and one value per segment".into()));
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(PiecewiseError::InvalidParameters("values must be positive".into()));
        }
        Ok(Self { knots, values })
    }

    pub fn eval(&self, k: f64) -> f64 {
        let j = self.knots.partition_point(|&v| v <= k).saturating_sub(1).min(self.values.len() - 1);
        self.values[j]
    }

    /// `∫_a^b dK / f(K)` for `a ≤ b` inside the support.
    pub fn reciprocal_integral(&self, a: f64, b: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &v) in self.values.iter().enumerate() {
            let lo = self.knots[j].max(a);
            let hi = self.knots[j + 1].min(b);
            if hi > lo {
                acc += (hi - lo) / v;
            }
        }
        acc
    }
}

/// `n` equal bins over `[lo, hi]`.
pub fn equal_bins(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    let mut edges: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    edges[n] = hi;
    edges
}

/// Replaces `a²` on each bin by the constant with the same average of `1/a²`.
pub fn coarsen_coefficient(a2: &PiecewiseConstant, bins: &[f64]) -> PiecewiseConstant {
    let values = bins
        .windows(2)
        .map(|w| (w[1] - w[0]) / a2.reciprocal_integral(w[0], w[1]))
        .collect();
    PiecewiseConstant { knots: bins.to_vec(), values }
}
