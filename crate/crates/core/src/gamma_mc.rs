//! Monte Carlo simulation of gamma-subordinated diffusions, used as an
//! independent check of the closed-form prices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::surface::NonHomLvgModel;
use crate::Slice;

pub const DEFAULT_STEPS: usize = 2000;
pub const MIN_PATHS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("invalid Monte Carlo parameters: {0}")]
    InvalidParameters(String),
    #[error("maturity {t} is beyond the first interval ending at {first}")]
    UnsupportedMaturity { t: f64, first: f64 },
}

/// Gamma subordinator with characteristic time `t*` and rate `alpha`.
/// Its value at time `t` is Gamma(shape `t/t*`, rate `alpha`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaClock {
    pub t_star: f64,
    pub alpha: f64,
}

impl GammaClock {
    pub fn new(t_star: f64, alpha: f64) -> Result<Self, McError> {
        if !(t_star > 0.0 && alpha > 0.0 && t_star.is_finite() && alpha.is_finite()) {
            return Err(McError::InvalidParameters(format!("t* = {t_star}, alpha = {alpha}")));
        }
        Ok(Self { t_star, alpha })
    }

    /// Clock with `E[Γ_t] = t`.
    pub fn unbiased(t_star: f64) -> Result<Self, McError> {
        Self::new(t_star, 1.0 / t_star)
    }

    pub fn is_unbiased(&self) -> bool {
        (self.alpha * self.t_star - 1.0).abs() < 1e-12
    }

    pub fn mean(&self, t: f64) -> f64 {
        t / (self.t_star * self.alpha)
    }

    pub fn variance(&self, t: f64) -> f64 {
        t / (self.t_star * self.alpha * self.alpha)
    }

    fn distribution(&self, t: f64) -> Gamma<f64> {
        Gamma::new(t / self.t_star, 1.0 / self.alpha).expect("positive shape and scale")
    }
}

/// One draw of the clock at time `t > 0`.
pub fn sample_gamma<R: Rng + ?Sized>(t: f64, clock: &GammaClock, rng: &mut R) -> f64 {
    clock.distribution(t).sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, n_steps: DEFAULT_STEPS, seed }
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    fn validate(&self) -> Result<(), McError> {
        if self.n_paths < MIN_PATHS || self.n_steps == 0 {
            return Err(McError::InvalidParameters(format!(
                "need at least {MIN_PATHS} paths and one step, got {} paths and {} steps",
                self.n_paths, self.n_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub price: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Sample mean of the terminal value and its standard error.
    pub forward: f64,
    pub forward_std_error: f64,
    /// Fraction of paths absorbed at either bound.
    pub absorbed_fraction: f64,
}

/// A driftless diffusion `dD = a(D) dW` absorbed at `lower` and `upper`.
pub struct AbsorbedDiffusion<A> {
    pub spot: f64,
    pub lower: f64,
    pub upper: f64,
    pub vol: A,
}

impl<A: Fn(f64) -> f64 + Sync> AbsorbedDiffusion<A> {
    /// Terminal values after running for `Γ_t` with an Euler scheme. Path `i`
    /// uses its own ChaCha stream, so results do not depend on threading.
    pub fn terminal_values(&self, clock: &GammaClock, t: f64, config: &McConfig) -> Result<Vec<f64>, McError> {
        config.validate()?;
        let dist = clock.distribution(t);
        let n = config.n_steps;
        Ok((0..config.n_paths)
            .into_par_iter()
            .map(|path| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(path as u64);
                let tau = dist.sample(&mut rng);
                let sqrt_dt = (tau / n as f64).sqrt();
                let mut d = self.spot;
                for _ in 0..n {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    d += (self.vol)(d) * sqrt_dt * z;
                    if d <= self.lower {
                        return self.lower;
                    }
                    if d >= self.upper {
                        return self.upper;
                    }
                }
                d
            })
            .collect())
    }
}

fn mean_and_error(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

/// Summary statistics of a call payoff over simulated terminal values.
pub fn call_estimate(terminal: &[f64], strike: f64, lower: f64, upper: f64, n_steps: usize) -> McEstimate {
    let n = terminal.len();
    let (price, std_error) = mean_and_error(terminal.iter().map(|&d| (d - strike).max(0.0)), n);
    let (forward, forward_std_error) = mean_and_error(terminal.iter().copied(), n);
    let absorbed = terminal.iter().filter(|&&d| d == lower || d == upper).count();
    McEstimate { price, std_error, n_paths: n, n_steps, forward, forward_std_error, absorbed_fraction: absorbed as f64 / n as f64 }
}

/// Simulated call price at maturity `t*` of the slice.
pub fn simulate_slice_call(slice: &Slice, strike: f64, config: &McConfig) -> Result<McEstimate, McError> {
    config.validate()?;
    let (lower, upper) = (slice.lower(), slice.upper());
    if strike >= upper {
        return Ok(exact(0.0, slice.spot(), config));
    }
    if strike <= lower {
        return Ok(exact(slice.spot() - strike, slice.spot(), config));
    }
    let clock = GammaClock::unbiased(slice.t_star())?;
    let process = AbsorbedDiffusion {
        spot: slice.spot(),
        lower,
        upper,
        vol: |d: f64| slice.sigma_at(d.clamp(lower, upper)).unwrap_or(0.0),
    };
    let terminal = process.terminal_values(&clock, slice.t_star(), config)?;
    Ok(call_estimate(&terminal, strike, lower, upper, config.n_steps))
}

fn exact(price: f64, forward: f64, config: &McConfig) -> McEstimate {
    McEstimate { price, std_error: 0.0, n_paths: config.n_paths, n_steps: config.n_steps, forward, forward_std_error: 0.0, absorbed_fraction: 0.0 }
}

/// Simulated call price at the first maturity of `model`; later maturities
/// are not supported.
pub fn simulate_nonhom_first_interval(model: &NonHomLvgModel, maturity: f64, strike: f64, config: &McConfig) -> Result<McEstimate, McError> {
    let first = model.maturities()[0];
    if (maturity - first).abs() > 1e-12 * first.max(1.0) {
        return Err(McError::UnsupportedMaturity { t: maturity, first });
    }
    simulate_slice_call(&model.slices()[0], strike, config)
}
