use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lvg_core::feasibility::{complete_strike_grid, default_margin, solve_feasible_prices};
use lvg_core::gamma_mc::{simulate_nonhom_first_interval, McConfig};
use lvg_core::market_data::{
    check_strict_admissibility, check_strike_structure, choose_bounds, discount_adjust, parse_quotes, AdmissiblePrices,
    MaturityPrices, PriceSurface, QuoteGrid, RateCurve, WORKING_DAYS_PER_YEAR,
};
use lvg_core::numerics::implied_vol;
use lvg_core::pdde_pricer::price_european;
use lvg_core::smile_interp::{match_tolerance, repricing_error, SmileParams};
use lvg_core::surface::{calibrate_model, NonHomLvgModel};

use crate::table::{fmt_num, number, Records, Table};
use crate::{
    CalibrateArgs, CheckArgs, CoarsenArgs, Command, ContractViolation, FeasibilityArgs, FeasifyArgs, IvArgs, MarketArgs, McCheckArgs, Payoff,
    PriceArgs, SmileArgs, EXIT_DATA, EXIT_INTERNAL, EXIT_OK,
};

pub fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Check(a) => check(&a),
        Command::Feasify(a) => feasify(&a),
        Command::Calibrate(a) => calibrate(&a),
        Command::Price(a) => price(&a),
        Command::Iv(a) => iv(&a),
        Command::Coarsen(a) => coarsen(&a),
        Command::McCheck(a) => mc_check(&a),
        Command::PlotData(a) => crate::plot::plot_data(&a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_curve(path: Option<&PathBuf>) -> Result<RateCurve> {
    match path {
        Some(p) => RateCurve::parse(&read(p)?).with_context(|| format!("parsing {}", p.display())),
        None => Ok(RateCurve::zero()),
    }
}

/// Quotes with rates and dividends folded into strikes and prices.
fn load_market(args: &MarketArgs) -> Result<QuoteGrid> {
    if !(args.spot > 0.0 && args.spot.is_finite()) {
        bail!("spot must be positive, got {}", args.spot);
    }
    let grid = parse_quotes(&read(&args.quotes)?, args.spot).with_context(|| format!("parsing {}", args.quotes.display()))?;
    if grid.maturities.is_empty() {
        bail!("{} contains no quotes", args.quotes.display());
    }
    if args.rates.is_none() && args.dividends.is_none() {
        return Ok(grid);
    }
    let rates = load_curve(args.rates.as_ref())?;
    let dividends = load_curve(args.dividends.as_ref())?;
    Ok(discount_adjust(&grid, &rates, &dividends)?)
}

fn load_model(path: &Path) -> Result<NonHomLvgModel> {
    NonHomLvgModel::from_json(&read(path)?).with_context(|| format!("loading model {}", path.display()))
}

fn mid_surface(grid: &QuoteGrid, bounds: &[(f64, f64)]) -> PriceSurface {
    let maturities = grid
        .maturities
        .iter()
        .zip(bounds)
        .map(|(m, &(lower, upper))| MaturityPrices {
            years: m.years,
            lower,
            upper,
            strikes: m.strikes(),
            prices: m.quotes.iter().map(|q| q.mid()).collect(),
        })
        .collect();
    PriceSurface { spot: grid.spot, maturities }
}

fn margin(args: &FeasibilityArgs, spot: f64) -> f64 {
    args.eps.unwrap_or_else(|| default_margin(spot))
}

/// Exact prices: the quotes themselves when every quote has `bid = ask`, the
/// strike structure needs no completion and the prices are strictly
/// admissible; otherwise the feasibility solve. The flag reports which.
fn admissible_prices(grid: &QuoteGrid, args: &FeasibilityArgs) -> Result<(AdmissiblePrices, bool)> {
    let bounds = choose_bounds(grid.spot, &grid.strike_sets(), args.bounds)?;
    let exact = grid.maturities.iter().all(|m| m.quotes.iter().all(|q| q.bid == q.ask));
    if exact && check_strike_structure(&grid.strike_sets()).is_ok() {
        if let Ok(p) = AdmissiblePrices::new(mid_surface(grid, &bounds), 0.0) {
            return Ok((p, false));
        }
    }
    let problem = complete_strike_grid(grid, &bounds)?;
    let prices = solve_feasible_prices(&problem, margin(args, grid.spot))?;
    Ok((prices, true))
}

fn days_of(years: f64) -> String {
    fmt_num((years * WORKING_DAYS_PER_YEAR).round())
}

fn check(args: &CheckArgs) -> Result<i32> {
    let grid = load_market(&args.market)?;
    let mut ok = true;
    let structure = check_strike_structure(&grid.strike_sets());
    if structure.is_ok() {
        println!("structure: ok");
    } else {
        ok = false;
        for v in &structure.violations {
            println!(
                "structure: maturity {} days strike {} is new inside the previous strike range",
                grid.maturities[v.maturity].days,
                fmt_num(v.strike)
            );
        }
    }
    let bounds = match choose_bounds(grid.spot, &grid.strike_sets(), args.bounds) {
        Ok(b) => b,
        Err(e) => {
            println!("bounds: {e}");
            return Ok(EXIT_DATA);
        }
    };
    for (m, (l, u)) in grid.maturities.iter().zip(&bounds) {
        println!("bounds: maturity {} days [{}, {}]", m.days, fmt_num(*l), fmt_num(*u));
    }
    let report = check_strict_admissibility(&mid_surface(&grid, &bounds), args.eps);
    for p in &report.bound_problems {
        println!("admissibility: {p}");
    }
    for v in &report.violations {
        println!(
            "admissibility: maturity {} days point {}: {:?} (slack {})",
            grid.maturities[v.maturity].days,
            v.index,
            v.kind,
            fmt_num(v.slack)
        );
    }
    if report.is_ok() {
        println!("admissibility: ok (min slack {})", fmt_num(report.min_slack));
    } else {
        ok = false;
    }
    Ok(if ok { EXIT_OK } else { EXIT_DATA })
}

fn prices_csv(grid: &QuoteGrid, prices: &AdmissiblePrices) -> String {
    let mut t = Table::new(&["maturity_days", "strike", "bid", "ask", "volume"]);
    for (mq, mp) in grid.maturities.iter().zip(prices.maturities()) {
        for (&k, &c) in mp.strikes.iter().zip(&mp.prices) {
            let volume = mq.quotes.iter().find(|q| q.strike == k).map(|q| q.volume).unwrap_or(0.0);
            t.row(&[mq.days.to_string(), fmt_num(k), fmt_num(c), fmt_num(c), fmt_num(volume)]);
        }
    }
    t.into_string()
}

fn feasify(args: &FeasifyArgs) -> Result<i32> {
    let grid = load_market(&args.market)?;
    let bounds = choose_bounds(grid.spot, &grid.strike_sets(), args.feasibility.bounds)?;
    let problem = complete_strike_grid(&grid, &bounds)?;
    let eps = margin(&args.feasibility, grid.spot);
    let prices = solve_feasible_prices(&problem, eps)?;
    write(&args.out, &prices_csv(&grid, &prices))?;
    println!(
        "feasify: {} prices ({} added by completion), margin {}, min slack {}",
        problem.cells.len(),
        problem.added_variables(),
        fmt_num(eps),
        fmt_num(prices.min_slack())
    );
    Ok(EXIT_OK)
}

fn smile_params(args: &SmileArgs, first_maturity: f64) -> SmileParams {
    let z = match (args.z, args.tstar) {
        (Some(z), _) => z,
        (None, Some(t)) => (2.0 / t).sqrt(),
        (None, None) => (2.0 / first_maturity).sqrt(),
    };
    SmileParams { z, delta1: args.delta1, delta2: args.delta2, delta3: args.delta3, delta4: args.delta4 }
}

fn knots_path(args: &CalibrateArgs) -> PathBuf {
    args.knots.clone().unwrap_or_else(|| args.out.with_extension("knots.csv"))
}

fn knots_csv(model: &NonHomLvgModel) -> String {
    let mut t = Table::new(&["maturity_days", "years", "knot", "sigma"]);
    for (s, &years) in model.slices().iter().zip(model.maturities()) {
        for (j, &k) in s.knots().iter().enumerate() {
            let sigma = s.sigmas().get(j).map(|&v| fmt_num(v)).unwrap_or_default();
            t.row(&[days_of(years), fmt_num(years), fmt_num(k), sigma]);
        }
    }
    t.into_string()
}

/// Largest repricing error per maturity with its tolerance.
fn repricing_report(model: &NonHomLvgModel, prices: &AdmissiblePrices) -> Result<Vec<(f64, f64)>> {
    model
        .slices()
        .iter()
        .zip(prices.maturities())
        .map(|(s, m)| Ok((repricing_error(s, m)?.0, match_tolerance(prices.spot(), m))))
        .collect()
}

fn calibrate(args: &CalibrateArgs) -> Result<i32> {
    let grid = load_market(&args.market)?;
    let (prices, feasified) = admissible_prices(&grid, &args.feasibility)?;
    let params = smile_params(&args.smile, grid.maturities[0].years);
    params.validate()?;
    let model = calibrate_model(&prices, &params)?;
    write(&args.out, &model.to_json())?;
    write(&knots_path(args), &knots_csv(&model))?;
    println!(
        "calibrate: {} maturities, z = {}, prices {}",
        model.len(),
        fmt_num(params.z),
        if feasified { "from the feasibility solve" } else { "used as given" }
    );
    let mut all_pass = true;
    for ((m, (err, tol)), mq) in repricing_report(&model, &prices)?.into_iter().enumerate().zip(&grid.maturities) {
        let pass = err <= tol;
        all_pass &= pass;
        println!(
            "repricing: maturity {} days, {} strikes, knots {}, max error {}, tolerance {}: {}",
            mq.days,
            prices.maturities()[m].strikes.len(),
            model.slices()[m].knots().len(),
            fmt_num(err),
            fmt_num(tol),
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if !all_pass {
        return Err(ContractViolation("calibrated model does not reprice its input".into()).into());
    }
    Ok(EXIT_OK)
}

fn price(args: &PriceArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let x = model.spot();
    let mut t = Table::new(&["maturity_days", "years", "spot", "strike", "payoff", "price", "closed_form"]);
    let mut rows: Vec<Vec<String>> = vec![Vec::new(); model.len() * args.strike.len()];
    for (j, &k) in args.strike.iter().enumerate() {
        let payoff = move |d: f64| match args.payoff {
            Payoff::Call => (d - k).max(0.0),
            Payoff::Put => (k - d).max(0.0),
        };
        let sol = price_european(&model, payoff, &[k], args.grid_n)?;
        for m in 0..model.len() {
            let value = sol.value_at(m, x).ok_or_else(|| ContractViolation("spot outside the pricing grid".into()))?;
            let (lo, hi) = model.bounds(m);
            let call = if k <= lo {
                x - k
            } else if k >= hi {
                0.0
            } else {
                model.call_price(m, k)?
            };
            let closed = match args.payoff {
                Payoff::Call => call,
                Payoff::Put => call - (x - k),
            };
            let years = model.maturities()[m];
            let name = match args.payoff {
                Payoff::Call => "call",
                Payoff::Put => "put",
            };
            rows[m * args.strike.len() + j] =
                vec![days_of(years), fmt_num(years), fmt_num(x), fmt_num(k), name.to_string(), fmt_num(value), fmt_num(closed)];
        }
    }
    for r in rows {
        t.row(&r);
    }
    emit(args.out.as_ref(), &t.into_string())?;
    Ok(EXIT_OK)
}

fn iv_field(price: f64, strike: f64, spot: f64, years: f64) -> String {
    implied_vol(price, strike, spot, years).map(fmt_num).unwrap_or_else(|_| "nan".into())
}

fn iv(args: &IvArgs) -> Result<i32> {
    let mut t = Table::new(&["maturity_days", "years", "strike", "call_price", "implied_vol"]);
    if let Some(path) = &args.quotes {
        let spot = args.spot.expect("clap requires spot with quotes");
        let grid = parse_quotes(&read(path)?, spot).with_context(|| format!("parsing {}", path.display()))?;
        for m in &grid.maturities {
            for q in &m.quotes {
                let c = q.mid();
                t.row(&[m.days.to_string(), fmt_num(m.years), fmt_num(q.strike), fmt_num(c), iv_field(c, q.strike, spot, m.years)]);
            }
        }
    } else if let Some(path) = &args.prices {
        let records = Records::parse(&read(path)?, &["years", "spot", "strike", "payoff", "price"])
            .with_context(|| format!("parsing {}", path.display()))?;
        for (line, row) in &records.rows {
            let years = number(row, "years", *line)?;
            let spot = number(row, "spot", *line)?;
            let k = number(row, "strike", *line)?;
            let p = number(row, "price", *line)?;
            let call = match row.get("payoff").map(String::as_str) {
                Some("call") => p,
                Some("put") => p + spot - k,
                other => bail!("line {line}: unknown payoff {other:?}"),
            };
            t.row(&[days_of(years), fmt_num(years), fmt_num(k), fmt_num(call), iv_field(call, k, spot, years)]);
        }
    }
    emit(args.out.as_ref(), &t.into_string())?;
    Ok(EXIT_OK)
}

fn coarsen(args: &CoarsenArgs) -> Result<i32> {
    if args.bins == 0 {
        bail!("need at least one bin");
    }
    let model = load_model(&args.model)?;
    let coarse = model.coarsened(args.bins).context("coarsened coefficients do not form a valid model")?;
    write(&args.out, &coarse.to_json())?;
    println!("coarsen: {} maturities, {} bins per slice", coarse.len(), args.bins);
    Ok(EXIT_OK)
}

fn mc_check(args: &McCheckArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let t1 = model.maturities()[0];
    let strikes = if args.strike.is_empty() { vec![model.spot()] } else { args.strike.clone() };
    let config = McConfig { n_paths: args.paths, n_steps: args.steps, seed: args.seed };
    let mut t = Table::new(&["strike", "closed_form", "mc_price", "std_error", "budget", "forward", "forward_std_error", "status"]);
    let mut all_pass = true;
    let slice = &model.slices()[0];
    for &k in &strikes {
        let est = simulate_nonhom_first_interval(&model, t1, k, &config)?;
        let (closed, time_value) = match slice.call_price(k) {
            Ok(c) => (c, slice.time_value(k)?),
            Err(_) => ((model.spot() - k).max(0.0), 0.0),
        };
        let budget = 3.0 * est.std_error + 0.002 * time_value;
        let forward_ok = (est.forward - model.spot()).abs() <= 3.0 * est.forward_std_error;
        let pass = (est.price - closed).abs() <= budget && forward_ok;
        all_pass &= pass;
        t.row(&[
            fmt_num(k),
            fmt_num(closed),
            fmt_num(est.price),
            fmt_num(est.std_error),
            fmt_num(budget),
            fmt_num(est.forward),
            fmt_num(est.forward_std_error),
            if pass { "PASS" } else { "FAIL" }.to_string(),
        ]);
    }
    emit(args.out.as_ref(), &t.into_string())?;
    Ok(if all_pass { EXIT_OK } else { EXIT_INTERNAL })
}
