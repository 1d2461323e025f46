#![allow(dead_code)]

use lvg_core::market_data::{choose_bounds, AdmissiblePrices, BoundsPolicy, MaturityPrices, MaturityQuotes, PriceSurface, Quote, QuoteGrid, WORKING_DAYS_PER_YEAR};
use lvg_core::numerics::black_scholes_call;
use lvg_core::smile_interp::SmileParams;
use lvg_core::surface::{calibrate_model, NonHomLvgModel};

pub const SPOT: f64 = 1286.0;
pub const DAYS: [u32; 5] = [2, 7, 27, 47, 67];
pub const VOLS: [f64; 5] = [0.25, 0.22, 0.20, 0.19, 0.18];
pub const STRIKES: [f64; 8] = [1200.0, 1225.0, 1250.0, 1275.0, 1300.0, 1325.0, 1350.0, 1375.0];

pub fn years(days: u32) -> f64 {
    days as f64 / WORKING_DAYS_PER_YEAR
}

/// Black-Scholes prices on the given strike sets with widened bounds.
pub fn bs_surface(spot: f64, days: &[u32], vols: &[f64], strikes: &[Vec<f64>], widen: f64) -> PriceSurface {
    let bounds = choose_bounds(spot, strikes, BoundsPolicy::Widen(widen)).unwrap();
    let maturities = days
        .iter()
        .zip(vols)
        .zip(strikes.iter().zip(&bounds))
        .map(|((&d, &v), (ks, &(lower, upper)))| MaturityPrices {
            years: years(d),
            lower,
            upper,
            strikes: ks.clone(),
            prices: ks.iter().map(|&k| black_scholes_call(spot, k, years(d), v)).collect(),
        })
        .collect();
    PriceSurface { spot, maturities }
}

pub fn acceptance_surface() -> AdmissiblePrices {
    let strikes = vec![STRIKES.to_vec(); DAYS.len()];
    AdmissiblePrices::new(bs_surface(SPOT, &DAYS, &VOLS, &strikes, 1.5), 0.0).unwrap()
}

pub fn acceptance_params() -> SmileParams {
    SmileParams::from_t_star(years(DAYS[0]))
}

pub fn acceptance_model() -> NonHomLvgModel {
    calibrate_model(&acceptance_surface(), &acceptance_params()).unwrap()
}

/// Quotes `price·(1 ∓ spread)` around Black-Scholes prices.
pub fn bs_quotes(spot: f64, days: &[u32], vols: &[f64], strikes: &[Vec<f64>], spread: f64) -> QuoteGrid {
    let maturities = days
        .iter()
        .zip(vols)
        .zip(strikes)
        .map(|((&d, &v), ks)| MaturityQuotes {
            days: d,
            years: years(d),
            quotes: ks
                .iter()
                .map(|&k| {
                    let c = black_scholes_call(spot, k, years(d), v);
                    Quote { strike: k, bid: c * (1.0 - spread), ask: c * (1.0 + spread), volume: 100.0 }
                })
                .collect(),
        })
        .collect();
    QuoteGrid { spot, maturities }
}
