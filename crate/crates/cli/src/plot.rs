use std::fmt::Write as _;
use std::fs;

use anyhow::{bail, Context, Result};
use lvg_core::numerics::implied_vol;
use lvg_core::surface::NonHomLvgModel;

use crate::table::{fmt_num, Table};
use crate::{PlotArgs, EXIT_OK};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

struct Curve {
    label: String,
    points: Vec<(f64, f64)>,
}

fn strike_range(args: &PlotArgs, model: &NonHomLvgModel) -> Result<(f64, f64)> {
    let (lo, hi) = model.bounds(0);
    let (a, b) = match args.range.as_slice() {
        [] => (0.9 * model.spot(), 1.1 * model.spot()),
        [a, b] => (*a, *b),
        other => bail!("--range takes LO,HI, got {} values", other.len()),
    };
    let (a, b) = (a.max(lo), b.min(hi));
    if !(a < b) {
        bail!("empty strike range inside the first maturity's bounds");
    }
    Ok((a, b))
}

pub fn plot_data(args: &PlotArgs) -> Result<i32> {
    if args.points < 2 {
        bail!("need at least two points per curve");
    }
    let model = NonHomLvgModel::from_json(&fs::read_to_string(&args.model).with_context(|| format!("reading {}", args.model.display()))?)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let (lo, hi) = strike_range(args, &model)?;
    let x = model.spot();
    let mut table = Table::new(&["maturity_days", "years", "strike", "call_price", "implied_vol", "local_variance"]);
    let mut prices = Vec::new();
    let mut vols = Vec::new();
    for (m, &years) in model.maturities().iter().enumerate() {
        let label = format!("{} d", (years * lvg_core::market_data::WORKING_DAYS_PER_YEAR).round());
        let mut pc = Curve { label: label.clone(), points: Vec::new() };
        let mut vc = Curve { label, points: Vec::new() };
        for i in 0..args.points {
            let k = lo + (hi - lo) * i as f64 / (args.points - 1) as f64;
            let c = model.call_price(m, k)?;
            let vol = implied_vol(c, k, x, years).ok();
            let a2 = model.local_variance(m, k).ok();
            table.row(&[
                fmt_num((years * lvg_core::market_data::WORKING_DAYS_PER_YEAR).round()),
                fmt_num(years),
                fmt_num(k),
                fmt_num(c),
                vol.map(fmt_num).unwrap_or_else(|| "nan".into()),
                a2.map(fmt_num).unwrap_or_else(|| "nan".into()),
            ]);
            pc.points.push((k, c));
            if let Some(v) = vol {
                vc.points.push((k, v));
            }
        }
        prices.push(pc);
        vols.push(vc);
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join("curves.csv");
    fs::write(&csv_path, table.into_string()).with_context(|| format!("writing {}", csv_path.display()))?;
    let svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n{}{}</svg>\n",
        panel(&prices, "call price", 0.0),
        panel(&vols, "implied volatility", WIDTH),
        w = 2.0 * WIDTH,
        h = HEIGHT,
    );
    let svg_path = args.out.join("curves.svg");
    fs::write(&svg_path, svg).with_context(|| format!("writing {}", svg_path.display()))?;
    println!("plot-data: wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(EXIT_OK)
}

/// One chart with axes, min/max tick labels and a legend.
fn panel(curves: &[Curve], title: &str, left: f64) -> String {
    let all = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let mut s = String::new();
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>", left + WIDTH / 2.0);
    if !(x0 < x1) {
        return s;
    }
    if !(y0 < y1) {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left + MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        s,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        left + MARGIN,
        MARGIN,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (value, anchor, xpos) in [(x0, "start", px(x0)), (x1, "end", px(x1))] {
        let _ = writeln!(s, "<text x=\"{xpos:.2}\" y=\"{}\" text-anchor=\"{anchor}\">{}</text>", HEIGHT - MARGIN + 15.0, label(value));
    }
    for (value, ypos) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ypos:.2}\" text-anchor=\"end\">{}</text>", left + MARGIN - 4.0, label(value));
    }
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>", pts.join(" "));
        let ly = MARGIN + 12.0 + 14.0 * i as f64;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\" text-anchor=\"end\">{}</text>", left + WIDTH - MARGIN - 6.0, c.label);
    }
    s
}

fn label(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
