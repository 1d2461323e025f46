//! Number formatting and small CSV helpers.

use std::collections::HashMap;
use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

/// `v` with 12 significant digits, trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_fraction(format!("{v:.decimals$}"))
    } else {
        let s = format!("{v:.11e}");
        let (mantissa, exponent) = s.split_once('e').expect("exponent form");
        format!("{}e{exponent}", trim_fraction(mantissa.to_string()))
    }
}

fn trim_fraction(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// CSV text assembled row by row.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { text: header.join(",") + "\n" }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.text, "{}", fields.join(","));
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Rows of a headed CSV file as column-name lookups.
pub struct Records {
    pub rows: Vec<(usize, HashMap<String, String>)>,
}

impl Records {
    pub fn parse(text: &str, required: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers().context("reading the header")?.iter().map(str::to_string).collect();
        for name in required {
            if !header.iter().any(|h| h == name) {
                bail!("missing column `{name}`");
            }
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.context("reading a row")?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.iter().all(str::is_empty) {
                continue;
            }
            rows.push((line, header.iter().cloned().zip(rec.iter().map(str::to_string)).collect()));
        }
        Ok(Self { rows })
    }
}

pub fn number(row: &HashMap<String, String>, name: &str, line: usize) -> Result<f64> {
    let raw = row.get(name).map(String::as_str).unwrap_or("");
    raw.parse().with_context(|| format!("line {line}: bad {name} `{raw}`"))
}
