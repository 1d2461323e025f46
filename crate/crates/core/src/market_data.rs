//! Quote ingestion, discounting, bound selection and admissibility checks.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Maturities are quoted in working days; this converts them to years.
pub const WORKING_DAYS_PER_YEAR: f64 = 252.0;

/// Default strictness margin for the admissibility inequalities.
pub const DEFAULT_CHECK_MARGIN: f64 = 1e-12;

const QUOTE_HEADER: [&str; 5] = ["maturity_days", "strike", "bid", "ask", "volume"];
const CURVE_HEADER: [&str; 2] = ["tenor_years", "rate"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketDataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate strike {strike} at maturity {days} days")]
    DuplicateStrike { days: u32, strike: f64 },
    #[error("line {line}: bid {bid} above ask {ask}")]
    NegativeSpread { line: usize, bid: f64, ask: f64 },
    #[error("curve undefined at t={t}")]
    CurveUndefined { t: f64 },
    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),
    #[error("prices are not strictly admissible: {0}")]
    NotAdmissible(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub strike: f64,
    pub bid: f64,
    pub ask: f64,
    pub volume: f64,
}

impl Quote {
    /// Untraded quotes do not bind the feasibility stage.
    pub fn is_traded(&self) -> bool {
        self.volume > 0.0
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaturityQuotes {
    pub days: u32,
    pub years: f64,
    /// Sorted by strike, strikes distinct.
    pub quotes: Vec<Quote>,
}

impl MaturityQuotes {
    pub fn strikes(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.strike).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuoteGrid {
    pub spot: f64,
    pub maturities: Vec<MaturityQuotes>,
}

impl QuoteGrid {
    pub fn strike_sets(&self) -> Vec<Vec<f64>> {
        self.maturities.iter().map(MaturityQuotes::strikes).collect()
    }
}

fn check_header(rec: &csv::StringRecord, expected: &[&str]) -> Result<(), MarketDataError> {
    let got: Vec<&str> = rec.iter().map(str::trim).collect();
    if got != expected {
        return Err(MarketDataError::Parse { line: 1, message: format!("expected header `{}`", expected.join(",")) });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T, MarketDataError> {
    let raw = rec.get(idx).map(str::trim).unwrap_or("");
    raw.parse().map_err(|_| MarketDataError::Parse { line, message: format!("bad {name} `{raw}`") })
}

fn records(text: &str) -> csv::StringRecordsIntoIter<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .into_records()
}

/// Parses `maturity_days,strike,bid,ask,volume` rows. The spot is not part of
/// the file format and is supplied separately.
pub fn parse_quotes(text: &str, spot: f64) -> Result<QuoteGrid, MarketDataError> {
    let mut rows = records(text);
    match rows.next() {
        None => return Ok(QuoteGrid { spot, maturities: Vec::new() }),
        Some(rec) => {
            let rec = rec.map_err(|e| MarketDataError::Parse { line: 1, message: e.to_string() })?;
            check_header(&rec, &QUOTE_HEADER)?;
        }
    }
    let mut by_days: BTreeMap<u32, Vec<Quote>> = BTreeMap::new();
    for rec in rows {
        let rec = rec.map_err(|e| MarketDataError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != QUOTE_HEADER.len() {
            return Err(MarketDataError::Parse { line, message: format!("expected 5 fields, got {}", rec.len()) });
        }
        let days: u32 = field(&rec, 0, "maturity_days", line)?;
        let q = Quote {
            strike: field(&rec, 1, "strike", line)?,
            bid: field(&rec, 2, "bid", line)?,
            ask: field(&rec, 3, "ask", line)?,
            volume: field(&rec, 4, "volume", line)?,
        };
        if days == 0 {
            return Err(MarketDataError::Parse { line, message: "maturity must be positive".into() });
        }
        if ![q.strike, q.bid, q.ask, q.volume].iter().all(|v| v.is_finite()) {
            return Err(MarketDataError::Parse { line, message: "non-finite value".into() });
        }
        if q.bid < 0.0 || q.volume < 0.0 {
            return Err(MarketDataError::Parse { line, message: "bid and volume must be non-negative".into() });
        }
        if q.ask < q.bid {
            return Err(MarketDataError::NegativeSpread { line, bid: q.bid, ask: q.ask });
        }
        by_days.entry(days).or_default().push(q);
    }
    let mut maturities = Vec::with_capacity(by_days.len());
    for (days, mut quotes) in by_days {
        quotes.sort_by(|a, b| a.strike.total_cmp(&b.strike));
        if let Some(w) = quotes.windows(2).find(|w| w[0].strike == w[1].strike) {
            return Err(MarketDataError::DuplicateStrike { days, strike: w[0].strike });
        }
        maturities.push(MaturityQuotes { days, years: days as f64 / WORKING_DAYS_PER_YEAR, quotes });
    }
    Ok(QuoteGrid { spot, maturities })
}

/// Piecewise-flat term structure: `rate[k]` applies on `(tenor[k-1], tenor[k]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    points: Vec<(f64, f64)>,
}

impl RateCurve {
    /// The zero curve, defined for every tenor.
    pub fn zero() -> Self {
        Self { points: Vec::new() }
    }

    pub fn flat(rate: f64, horizon: f64) -> Self {
        Self { points: vec![(horizon, rate)] }
    }

    pub fn parse(text: &str) -> Result<Self, MarketDataError> {
        let mut rows = records(text);
        let head = rows
            .next()
            .ok_or(MarketDataError::Parse { line: 1, message: "empty curve file".into() })?
            .map_err(|e| MarketDataError::Parse { line: 1, message: e.to_string() })?;
        check_header(&head, &CURVE_HEADER)?;
        let mut points = Vec::new();
        for rec in rows {
            let rec = rec.map_err(|e| MarketDataError::Parse { line: 0, message: e.to_string() })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let t: f64 = field(&rec, 0, "tenor_years", line)?;
            let r: f64 = field(&rec, 1, "rate", line)?;
            let last = points.last().map(|p: &(f64, f64)| p.0).unwrap_or(0.0);
            if !(t > last) || !r.is_finite() {
                return Err(MarketDataError::Parse { line, message: "tenors must be positive and increasing".into() });
            }
            points.push((t, r));
        }
        if points.is_empty() {
            return Err(MarketDataError::Parse { line: 2, message: "curve has no rows".into() });
        }
        Ok(Self { points })
    }

    /// `∫₀ᵗ r(s) ds`.
    pub fn integral(&self, t: f64) -> Result<f64, MarketDataError> {
        if self.points.is_empty() {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &(tenor, rate) in &self.points {
            if t <= tenor {
                return Ok(acc + rate * (t - prev));
            }
            acc += rate * (tenor - prev);
            prev = tenor;
        }
        Err(MarketDataError::CurveUndefined { t })
    }
}

/// Moves quotes into units where call prices are expectations of
/// `(S_T − K')⁺` for a martingale `S` started at the unchanged spot:
/// `K' = K·e^{−∫(r−q)}`, `C' = C·e^{∫q}`.
pub fn discount_adjust(grid: &QuoteGrid, rates: &RateCurve, dividends: &RateCurve) -> Result<QuoteGrid, MarketDataError> {
    let mut out = grid.clone();
    for m in &mut out.maturities {
        let r = rates.integral(m.years)?;
        let q = dividends.integral(m.years)?;
        let (ks, cs) = ((q - r).exp(), q.exp());
        for quote in &mut m.quotes {
            quote.strike *= ks;
            quote.bid *= cs;
            quote.ask *= cs;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureViolation {
    /// Index of the later maturity carrying the offending strike.
    pub maturity: usize,
    pub strike: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructureReport {
    pub violations: Vec<StructureViolation>,
}

impl StructureReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Flags strikes that first appear at a later maturity strictly inside the
/// strike range of the preceding one.
pub fn check_strike_structure(strikes: &[Vec<f64>]) -> StructureReport {
    let mut violations = Vec::new();
    for i in 1..strikes.len() {
        let prev = &strikes[i - 1];
        let (Some(&lo), Some(&hi)) = (prev.first(), prev.last()) else { continue };
        for &k in &strikes[i] {
            let known = prev.contains(&k);
            if !known && k > lo && k < hi {
                violations.push(StructureViolation { maturity: i, strike: k });
            }
        }
    }
    StructureReport { violations }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundsPolicy {
    Fixed { lower: f64, upper: f64 },
    /// `L = K_min·(2 − F)` (floored at zero), `U = K_max·F`, then clipped and nested.
    Widen(f64),
}

impl std::str::FromStr for BoundsPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("fixed:") {
            let (l, u) = rest.split_once(',').ok_or("expected fixed:L,U")?;
            let lower = l.trim().parse().map_err(|_| format!("bad lower bound `{l}`"))?;
            let upper = u.trim().parse().map_err(|_| format!("bad upper bound `{u}`"))?;
            Ok(Self::Fixed { lower, upper })
        } else if let Some(f) = s.strip_prefix("widen:") {
            let f: f64 = f.trim().parse().map_err(|_| format!("bad widen factor `{f}`"))?;
            if !(f > 1.0) {
                return Err("widen factor must exceed 1".into());
            }
            Ok(Self::Widen(f))
        } else {
            Err(format!("unknown bounds policy `{s}`"))
        }
    }
}

/// Interval that must contain `(L_i, U_i)`: strictly between the outer
/// strikes of later maturities that lie outside maturity `i`'s range.
fn exclusion_interval(strikes: &[Vec<f64>], i: usize) -> (f64, f64) {
    let (Some(&k1), Some(&kn)) = (strikes[i].first(), strikes[i].last()) else {
        return (f64::NEG_INFINITY, f64::INFINITY);
    };
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for later in &strikes[i + 1..] {
        for &k in later {
            if k < k1 {
                lo = lo.max(k);
            }
            if k > kn {
                hi = hi.min(k);
            }
        }
    }
    (lo, hi)
}

/// Lists every violated bound inequality; empty when the bounds are usable.
pub fn bound_violations(spot: f64, strikes: &[Vec<f64>], bounds: &[(f64, f64)]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, &(l, u)) in bounds.iter().enumerate() {
        if !(l < spot && spot < u) {
            out.push(format!("maturity {i}: spot {spot} outside ({l}, {u})"));
        }
        if let (Some(&k1), Some(&kn)) = (strikes[i].first(), strikes[i].last()) {
            if !(l < k1 && kn < u) {
                out.push(format!("maturity {i}: strikes [{k1}, {kn}] not inside ({l}, {u})"));
            }
        }
        let (lo, hi) = exclusion_interval(strikes, i);
        if l < lo || u > hi {
            out.push(format!("maturity {i}: ({l}, {u}) reaches a later strike ({lo} or {hi})"));
        }
        if i > 0 {
            let (pl, pu) = bounds[i - 1];
            if l > pl || u < pu {
                out.push(format!("maturity {i}: ({l}, {u}) does not contain ({pl}, {pu})"));
            }
        }
    }
    out
}

pub fn choose_bounds(spot: f64, strikes: &[Vec<f64>], policy: BoundsPolicy) -> Result<Vec<(f64, f64)>, MarketDataError> {
    let bounds: Vec<(f64, f64)> = match policy {
        BoundsPolicy::Fixed { lower, upper } => vec![(lower, upper); strikes.len()],
        BoundsPolicy::Widen(f) => {
            let mut out: Vec<(f64, f64)> = Vec::with_capacity(strikes.len());
            for (i, ks) in strikes.iter().enumerate() {
                let kmin = ks.first().copied().unwrap_or(spot).min(spot);
                let kmax = ks.last().copied().unwrap_or(spot).max(spot);
                let (lo, hi) = exclusion_interval(strikes, i);
                let mut l = if kmin > 0.0 { (kmin * (2.0 - f)).max(0.0) } else { kmin - (f - 1.0) * kmax.abs().max(1.0) };
                let mut u = kmax * f;
                l = l.max(lo);
                u = u.min(hi);
                if let Some(&(pl, pu)) = out.last() {
                    l = l.min(pl);
                    u = u.max(pu);
                }
                out.push((l, u));
            }
            out
        }
    };
    let problems = bound_violations(spot, strikes, &bounds);
    if problems.is_empty() {
        Ok(bounds)
    } else {
        Err(MarketDataError::InfeasibleBounds(problems.join("; ")))
    }
}

/// Candidate exact call prices for one maturity, without the synthetic
/// endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct MaturityPrices {
    pub years: f64,
    pub lower: f64,
    pub upper: f64,
    pub strikes: Vec<f64>,
    pub prices: Vec<f64>,
}

impl MaturityPrices {
    /// Price graph with `(L, x−L)` prepended and `(U, 0)` appended.
    pub fn augmented(&self, spot: f64) -> (Vec<f64>, Vec<f64>) {
        let mut k = Vec::with_capacity(self.strikes.len() + 2);
        let mut c = Vec::with_capacity(self.strikes.len() + 2);
        k.push(self.lower);
        c.push(spot - self.lower);
        k.extend_from_slice(&self.strikes);
        c.extend_from_slice(&self.prices);
        k.push(self.upper);
        c.push(0.0);
        (k, c)
    }

    /// Linear interpolation of the augmented graph; `None` outside `[L, U]`.
    pub fn interpolate(&self, spot: f64, strike: f64) -> Option<f64> {
        if !(strike >= self.lower && strike <= self.upper) {
            return None;
        }
        let (k, c) = self.augmented(spot);
        let j = k.partition_point(|&v| v <= strike).clamp(1, k.len() - 1);
        let t = (strike - k[j - 1]) / (k[j] - k[j - 1]);
        Some(c[j - 1] + t * (c[j] - c[j - 1]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSurface {
    pub spot: f64,
    pub maturities: Vec<MaturityPrices>,
}

impl PriceSurface {
    pub fn strike_sets(&self) -> Vec<Vec<f64>> {
        self.maturities.iter().map(|m| m.strikes.clone()).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.maturities.iter().map(|m| (m.lower, m.upper)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Bounds,
    StrikeOrder,
    NotDecreasing,
    NotConvex,
    BelowIntrinsic,
    Calendar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub maturity: usize,
    /// Index in the augmented graph (0 is the lower bound) for graph
    /// inequalities, strike index otherwise.
    pub index: usize,
    pub kind: ViolationKind,
    pub slack: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "maturity {} point {}: {:?} (slack {:e})", self.maturity, self.index, self.kind, self.slack)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub violations: Vec<Violation>,
    pub bound_problems: Vec<String>,
    /// Smallest slack over all price inequalities.
    pub min_slack: f64,
}

impl AdmissibilityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty() && self.bound_problems.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut parts: Vec<String> = self.bound_problems.clone();
        parts.extend(self.violations.iter().map(|v| v.to_string()));
        parts.join("; ")
    }
}

/// Chord gap at the middle point of three graph points: positive iff the
/// middle point lies strictly below the chord.
pub fn chord_gap(k: [f64; 3], c: [f64; 3]) -> f64 {
    let t = (k[1] - k[0]) / (k[2] - k[0]);
    c[0] + t * (c[2] - c[0]) - c[1]
}

/// Checks every strict-admissibility inequality with margin `delta`.
pub fn check_strict_admissibility(surface: &PriceSurface, delta: f64) -> AdmissibilityReport {
    let x = surface.spot;
    let mut violations = Vec::new();
    let mut min_slack = f64::INFINITY;
    let mut record = |maturity, index, kind, slack: f64, violations: &mut Vec<Violation>| {
        min_slack = min_slack.min(slack);
        if !(slack > delta) {
            violations.push(Violation { maturity, index, kind, slack });
        }
    };
    for (i, m) in surface.maturities.iter().enumerate() {
        if m.strikes.len() != m.prices.len() || m.strikes.windows(2).any(|w| !(w[0] < w[1])) {
            violations.push(Violation { maturity: i, index: 0, kind: ViolationKind::StrikeOrder, slack: f64::NAN });
            continue;
        }
        let (k, c) = m.augmented(x);
        for j in 0..k.len() - 1 {
            record(i, j, ViolationKind::NotDecreasing, c[j] - c[j + 1], &mut violations);
        }
        for j in 1..k.len() - 1 {
            let gap = chord_gap([k[j - 1], k[j], k[j + 1]], [c[j - 1], c[j], c[j + 1]]);
            record(i, j, ViolationKind::NotConvex, gap, &mut violations);
        }
        for (j, (&kj, &cj)) in m.strikes.iter().zip(&m.prices).enumerate() {
            record(i, j, ViolationKind::BelowIntrinsic, cj - (x - kj).max(0.0), &mut violations);
        }
        if i > 0 {
            let prev = &surface.maturities[i - 1];
            for (j, (&kj, &cj)) in m.strikes.iter().zip(&m.prices).enumerate() {
                if kj > prev.lower && kj < prev.upper {
                    if let Some(p) = prev.interpolate(x, kj) {
                        record(i, j, ViolationKind::Calendar, cj - p, &mut violations);
                    }
                }
            }
        }
    }
    let bound_problems = bound_violations(x, &surface.strike_sets(), &surface.bounds());
    AdmissibilityReport { violations, bound_problems, min_slack }
}

/// Prices that passed [`check_strict_admissibility`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissiblePrices {
    surface: PriceSurface,
    min_slack: f64,
}

impl AdmissiblePrices {
    pub fn new(surface: PriceSurface, delta: f64) -> Result<Self, MarketDataError> {
        let report = check_strict_admissibility(&surface, delta);
        if !report.is_ok() {
            return Err(MarketDataError::NotAdmissible(report.summary()));
        }
        Ok(Self { surface, min_slack: report.min_slack })
    }

    pub fn surface(&self) -> &PriceSurface {
        &self.surface
    }

    pub fn into_surface(self) -> PriceSurface {
        self.surface
    }

    pub fn spot(&self) -> f64 {
        self.surface.spot
    }

    pub fn maturities(&self) -> &[MaturityPrices] {
        &self.surface.maturities
    }

    pub fn min_slack(&self) -> f64 {
        self.min_slack
    }
}
