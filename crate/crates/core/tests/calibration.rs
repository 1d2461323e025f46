mod common;

use common::*;
use lvg_core::gamma_mc::{simulate_nonhom_first_interval, McConfig};
use lvg_core::market_data::AdmissiblePrices;
use lvg_core::pdde_pricer::{dupire_chain, price_european};
use lvg_core::smile_interp::{min_time_value_increase, SmileParams};
use lvg_core::surface::{calibrate_model, NonHomLvgModel};
use proptest::prelude::*;

fn non_knot_grid(model: &NonHomLvgModel, m: usize, n: usize) -> Vec<f64> {
    let (lo, hi) = model.bounds(m);
    (1..=n)
        .map(|i| lo + (hi - lo) * (i as f64 - 0.5) / n as f64)
        .filter(|k| model.slices().iter().all(|s| !s.knots().contains(k)) && *k != model.spot())
        .collect()
}

#[test]
fn every_input_price_is_matched() {
    let prices = acceptance_surface();
    let model = calibrate_model(&prices, &acceptance_params()).unwrap();
    for (m, mp) in prices.maturities().iter().enumerate() {
        for (&k, &c) in mp.strikes.iter().zip(&mp.prices) {
            let err = (model.call_price(m, k).unwrap() - c).abs();
            assert!(err <= 1e-9 * SPOT, "maturity {m} strike {k}: {err:e}");
        }
    }
}

#[test]
fn slices_are_arbitrage_free() {
    let prices = acceptance_surface();
    let model = calibrate_model(&prices, &acceptance_params()).unwrap();
    for (m, s) in model.slices().iter().enumerate() {
        let n_strikes = prices.maturities()[m].strikes.len();
        assert!(s.knots().len() <= 3 * (n_strikes + 2));
        assert!((s.left_slope_at_spot() - s.right_slope_at_spot() - 1.0).abs() < 1e-10);
        let (lo, hi) = model.bounds(m);
        let grid: Vec<f64> = (1..1000).map(|i| lo + (hi - lo) * i as f64 / 1000.0).collect();
        let calls: Vec<f64> = grid.iter().map(|&k| s.call_price(k).unwrap()).collect();
        assert!(calls.windows(2).all(|w| w[1] < w[0]));
        assert!(grid.iter().all(|&k| s.density(k).unwrap() > 0.0));
        if m > 0 {
            let (diff, at) = min_time_value_increase(s, &model.slices()[m - 1], 1000);
            assert!(diff > 0.0, "maturity {m}: V decreases by {diff} at {at}");
        }
    }
}

#[test]
fn forward_equation_holds_between_slices() {
    let model = acceptance_model();
    for m in 0..model.len() {
        let t_star = model.t_star(m);
        let grid = non_knot_grid(&model, m, 500);
        assert!(grid.len() > 450);
        for k in grid {
            let a2 = model.local_variance(m, k).unwrap();
            let c2 = model.slices()[m].density(k).unwrap();
            let prev = if m == 0 { (SPOT - k).max(0.0) } else { model.slices()[m - 1].time_value_extended(k) + (SPOT - k).max(0.0) };
            let residual = 0.5 * a2 * c2 - (model.call_price(m, k).unwrap() - prev) / t_star;
            assert!(residual.abs() < 1e-9, "m={m} k={k}: {residual:e}");
        }
    }
}

#[test]
fn local_variance_matches_finite_differences() {
    let model = acceptance_model();
    let m = 2;
    let h = 1e-5 * SPOT;
    for k in [1190.0, 1240.0, 1270.0, 1310.0, 1360.0] {
        let c = |x: f64| model.call_price(m, x).unwrap();
        let c2 = (c(k + h) - 2.0 * c(k) + c(k - h)) / (h * h);
        let prev = model.slices()[m - 1].call_price(k).unwrap();
        let fd = 2.0 / model.t_star(m) * (c(k) - prev) / c2;
        let exact = model.local_variance(m, k).unwrap();
        assert!(((fd - exact) / exact).abs() < 1e-6, "k={k}: {fd} vs {exact}");
    }
}

#[test]
fn first_local_variance_is_the_slice_coefficient() {
    let model = acceptance_model();
    let s = &model.slices()[0];
    for k in non_knot_grid(&model, 0, 100) {
        let a2 = model.local_variance(0, k).unwrap();
        assert!((a2 / s.sigma_at(k).unwrap().powi(2) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn model_file_round_trip() {
    let model = acceptance_model();
    let json = model.to_json();
    let back = NonHomLvgModel::from_json(&json).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_json(), json);
}

fn finite_difference_errors(model: &NonHomLvgModel, n: usize) -> (f64, f64) {
    let strike = 1300.0;
    let backward = price_european(model, |d| (d - strike).max(0.0), &[strike], n).unwrap();
    let forward = dupire_chain(model, n).unwrap();
    let mut eb: f64 = 0.0;
    let mut ef: f64 = 0.0;
    for m in 0..model.len() {
        eb = eb.max((backward.value_at(m, SPOT).unwrap() - model.call_price(m, strike).unwrap()).abs());
        for (i, &k) in forward.nodes.iter().enumerate() {
            ef = ef.max((forward.values[m][i] - model.call_price(m, k).unwrap()).abs());
        }
    }
    (eb, ef)
}

#[test]
fn finite_difference_pricers_reproduce_the_model() {
    let model = acceptance_model();
    let (b1, f1) = finite_difference_errors(&model, 1000);
    let (b2, f2) = finite_difference_errors(&model, 2000);
    assert!(b2 < 1e-3 && f2 < 2e-3, "{b2:e} {f2:e}");
    assert!(b1 / b2 > 3.0 && f1 / f2 > 3.0, "{b1:e}/{b2:e} {f1:e}/{f2:e}");
}

#[test]
fn put_call_parity_through_all_intervals() {
    let model = acceptance_model();
    let k = 1290.0;
    let call = price_european(&model, |d| (d - k).max(0.0), &[k], 1000).unwrap();
    let put = price_european(&model, |d| (k - d).max(0.0), &[k], 1000).unwrap();
    for m in 0..model.len() {
        for (i, &x) in call.nodes.iter().enumerate() {
            assert!((call.values[m][i] - put.values[m][i] - (x - k)).abs() < 1e-9);
        }
    }
}

#[test]
fn monte_carlo_agrees_on_first_interval() {
    let model = acceptance_model();
    let cfg = McConfig::new(20_000, 17).with_steps(500);
    for k in [1260.0, 1286.0, 1310.0] {
        let est = simulate_nonhom_first_interval(&model, model.maturities()[0], k, &cfg).unwrap();
        let want = model.call_price(0, k).unwrap();
        let tv = model.slices()[0].time_value(k).unwrap();
        assert!((est.price - want).abs() < 3.0 * est.std_error + 0.002 * tv, "k={k}: {} vs {want} ± {}", est.price, est.std_error);
        assert!((est.forward - SPOT).abs() < 3.0 * est.forward_std_error);
    }
}

#[test]
fn coarsened_model_is_usable() {
    let model = acceptance_model();
    let coarse = model.coarsened(10).unwrap();
    assert_eq!(coarse.len(), model.len());
    for m in 0..coarse.len() {
        assert!(coarse.slices()[m].knots().len() <= 11);
        let c = coarse.call_price(m, SPOT).unwrap();
        assert!(c > 0.0 && c < SPOT);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_black_scholes_surfaces_calibrate(
        spot in 50.0f64..2000.0,
        base in 0.12f64..0.5,
        decay in proptest::collection::vec(0.85f64..1.0, 2),
        n_strikes in 3usize..10,
        width in 0.02f64..0.15,
        z_scale in 0.5f64..2.0,
    ) {
        let days = [5u32, 21, 63];
        let vols = [base, base * decay[0], base * decay[0] * decay[1]];
        let strikes: Vec<f64> = (0..n_strikes)
            .map(|i| spot * (1.0 - width + 2.0 * width * i as f64 / (n_strikes - 1) as f64))
            .filter(|k| (k - spot).abs() > 1e-9 * spot)
            .collect();
        let sets = vec![strikes; days.len()];
        let surface = bs_surface(spot, &days, &vols, &sets, 1.6);
        prop_assume!(lvg_core::market_data::check_strict_admissibility(&surface, 0.0).is_ok());
        let prices = AdmissiblePrices::new(surface, 0.0).unwrap();
        let params = SmileParams::new(z_scale * (2.0 / years(days[0])).sqrt());
        let model = calibrate_model(&prices, &params).unwrap();
        for (m, mp) in prices.maturities().iter().enumerate() {
            for (&k, &c) in mp.strikes.iter().zip(&mp.prices) {
                prop_assert!((model.call_price(m, k).unwrap() - c).abs() <= 1e-9 * spot);
            }
        }
    }
}
