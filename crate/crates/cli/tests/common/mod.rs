#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use lvg_core::numerics::black_scholes_call;

pub const SPOT: f64 = 1286.0;
pub const DAYS: [u32; 5] = [2, 7, 27, 47, 67];
pub const VOLS: [f64; 5] = [0.25, 0.22, 0.20, 0.19, 0.18];
pub const STRIKES: [f64; 8] = [1200.0, 1225.0, 1250.0, 1275.0, 1300.0, 1325.0, 1350.0, 1375.0];

/// Quotes CSV around Black-Scholes prices; `spread = 0` gives exact prices.
pub fn quotes_csv(spread: f64) -> String {
    let mut text = String::from("maturity_days,strike,bid,ask,volume\n");
    for (&d, &v) in DAYS.iter().zip(&VOLS) {
        for &k in &STRIKES {
            let c = black_scholes_call(SPOT, k, d as f64 / 252.0, v);
            text.push_str(&format!("{d},{k},{:?},{:?},100\n", c * (1.0 - spread), c * (1.0 + spread)));
        }
    }
    text
}

pub fn lvg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvg")).args(args).output().expect("lvg runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}
