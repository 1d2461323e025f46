//! Turning bid/ask quotes into a strictly admissible set of exact prices.
//!
//! Missing strikes at earlier maturities are filled in as free variables,
//! every admissibility inequality becomes an affine constraint, and a point
//! of the resulting polytope is found by cyclic projection onto half-spaces.

use thiserror::Error;

use crate::market_data::{AdmissiblePrices, MarketDataError, MaturityPrices, PriceSurface, QuoteGrid, ViolationKind};

pub const MAX_SWEEPS: usize = 100_000;
/// Constraints are targeted at this multiple of the margin.
pub const TIGHTENING: f64 = 1.1;
/// Tolerance applied to the margin when the result is re-checked.
pub const CHECK_RELAXATION: f64 = 1e-3;

/// `ε = 10⁻⁴ · spot`.
pub fn default_margin(spot: f64) -> f64 {
    1e-4 * spot.abs()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeasibilityError {
    #[error("no admissible prices found after {sweeps} sweeps (max violation {max_violation:.3e}); quotes may contain arbitrage or the margin is too large")]
    Infeasible { sweeps: usize, max_violation: f64 },
    #[error("{0} bounds given for {1} maturities")]
    BoundsMismatch(usize, usize),
    #[error("margin must be positive, got {0}")]
    InvalidMargin(f64),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
}

/// One unknown price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub maturity: usize,
    pub strike: f64,
    pub lo: f64,
    pub hi: f64,
    /// Starting value of the projection.
    pub start: f64,
    pub traded: bool,
    /// Added by strike completion rather than quoted.
    pub completed: bool,
}

/// `Σ coeffs·c + constant ≥ margin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
    pub kind: ViolationKind,
    pub maturity: usize,
    norm_sq: f64,
}

impl Constraint {
    fn new(coeffs: Vec<(usize, f64)>, constant: f64, kind: ViolationKind, maturity: usize) -> Self {
        let norm_sq = coeffs.iter().map(|(_, a)| a * a).sum();
        Self { coeffs, constant, kind, maturity, norm_sq }
    }

    pub fn slack(&self, c: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|&(i, a)| a * c[i]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityProblem {
    pub spot: f64,
    pub years: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    /// Completed strikes per maturity.
    pub strikes: Vec<Vec<f64>>,
    /// Maturity-major, strike-minor.
    pub cells: Vec<Cell>,
    pub constraints: Vec<Constraint>,
    offsets: Vec<usize>,
}

impl FeasibilityProblem {
    pub fn added_variables(&self) -> usize {
        self.cells.iter().filter(|c| c.completed).count()
    }

    pub fn cell_index(&self, maturity: usize, j: usize) -> usize {
        self.offsets[maturity] + j
    }

    pub fn initial_prices(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.start.clamp(c.lo, c.hi)).collect()
    }

    /// Largest shortfall of any constraint below `margin`, or of any box.
    pub fn max_violation(&self, c: &[f64], margin: f64) -> f64 {
        let cons = self.constraints.iter().map(|k| margin - k.slack(c)).fold(0.0, f64::max);
        let boxes = self.cells.iter().zip(c).map(|(cell, &v)| (cell.lo - v).max(v - cell.hi)).fold(0.0, f64::max);
        cons.max(boxes)
    }

    pub fn surface(&self, c: &[f64]) -> PriceSurface {
        let maturities = (0..self.years.len())
            .map(|i| MaturityPrices {
                years: self.years[i],
                lower: self.bounds[i].0,
                upper: self.bounds[i].1,
                strikes: self.strikes[i].clone(),
                prices: c[self.offsets[i]..self.offsets[i] + self.strikes[i].len()].to_vec(),
            })
            .collect();
        PriceSurface { spot: self.spot, maturities }
    }
}

/// Linear interpolation weights on the augmented graph `(L, x−L), cells…, (U, 0)`:
/// the value at `k` is `Σ coeffs·c + constant`.
fn interpolation_row(k: f64, strikes: &[f64], offset: usize, lower: f64, upper: f64, spot: f64) -> (Vec<(usize, f64)>, f64) {
    let mut ks = vec![lower];
    ks.extend_from_slice(strikes);
    ks.push(upper);
    let j = ks.partition_point(|&v| v <= k).clamp(1, ks.len() - 1);
    let t = (k - ks[j - 1]) / (ks[j] - ks[j - 1]);
    let n = strikes.len();
    let mut coeffs = Vec::new();
    let mut constant = 0.0;
    for (node, w) in [(j - 1, 1.0 - t), (j, t)] {
        if w == 0.0 {
            continue;
        }
        if node == 0 {
            constant += w * (spot - lower);
        } else if node == n + 1 {
            // price zero at U
        } else {
            coeffs.push((offset + node - 1, w));
        }
    }
    (coeffs, constant)
}

/// Linear interpolation of quoted mids with the synthetic endpoints, used to
/// start completion cells.
fn interpolated_start(k: f64, quoted: &[(f64, f64)], lower: f64, upper: f64, spot: f64) -> f64 {
    let mut pts = vec![(lower, spot - lower)];
    pts.extend_from_slice(quoted);
    pts.push((upper, 0.0));
    let j = pts.partition_point(|p| p.0 <= k).clamp(1, pts.len() - 1);
    let (a, b) = (pts[j - 1], pts[j]);
    a.1 + (k - a.0) / (b.0 - a.0) * (b.1 - a.1)
}

/// Completes the strike grid backwards in time (a strike of `T_i` strictly
/// inside the strike range of `T_{i−1}` is added there) and emits every
/// strict-admissibility inequality.
pub fn complete_strike_grid(grid: &QuoteGrid, bounds: &[(f64, f64)]) -> Result<FeasibilityProblem, FeasibilityError> {
    let m = grid.maturities.len();
    if bounds.len() != m {
        return Err(FeasibilityError::BoundsMismatch(bounds.len(), m));
    }
    let x = grid.spot;
    let mut strikes = grid.strike_sets();
    for i in (0..m.saturating_sub(1)).rev() {
        let (Some(&lo), Some(&hi)) = (strikes[i].first(), strikes[i].last()) else { continue };
        let extra: Vec<f64> = strikes[i + 1].iter().copied().filter(|&k| k > lo && k < hi && !strikes[i].contains(&k)).collect();
        strikes[i].extend(extra);
        strikes[i].sort_by(|a, b| a.partial_cmp(b).expect("finite strikes"));
    }

    let mut cells = Vec::new();
    let mut offsets = Vec::with_capacity(m);
    for (i, mq) in grid.maturities.iter().enumerate() {
        offsets.push(cells.len());
        let (l, u) = bounds[i];
        let mids: Vec<(f64, f64)> = mq.quotes.iter().map(|q| (q.strike, q.mid())).collect();
        for &k in &strikes[i] {
            let intrinsic = (x - k).max(0.0);
            let cell = match mq.quotes.iter().find(|q| q.strike == k) {
                Some(q) if q.is_traded() => Cell { maturity: i, strike: k, lo: q.bid, hi: q.ask, start: q.mid(), traded: true, completed: false },
                Some(q) => Cell { maturity: i, strike: k, lo: intrinsic, hi: x, start: q.mid(), traded: false, completed: false },
                None => Cell { maturity: i, strike: k, lo: intrinsic, hi: x, start: interpolated_start(k, &mids, l, u, x), traded: false, completed: true },
            };
            cells.push(cell);
        }
    }

    let mut constraints = Vec::new();
    for i in 0..m {
        let (l, u) = bounds[i];
        let n = strikes[i].len();
        let off = offsets[i];
        // augmented node p: 0 is (L, x−L), n+1 is (U, 0), otherwise cell off+p−1
        let node = |p: usize| -> (Option<usize>, f64) {
            if p == 0 {
                (None, x - l)
            } else if p == n + 1 {
                (None, 0.0)
            } else {
                (Some(off + p - 1), 0.0)
            }
        };
        let knot = |p: usize| if p == 0 { l } else if p == n + 1 { u } else { strikes[i][p - 1] };
        let row = |terms: &[(usize, f64)]| {
            let mut coeffs = Vec::new();
            let mut constant = 0.0;
            for &(p, w) in terms {
                match node(p) {
                    (Some(idx), _) => coeffs.push((idx, w)),
                    (None, v) => constant += w * v,
                }
            }
            (coeffs, constant)
        };
        for p in 0..=n {
            let (c, b) = row(&[(p, 1.0), (p + 1, -1.0)]);
            constraints.push(Constraint::new(c, b, ViolationKind::NotDecreasing, i));
        }
        for p in 1..=n {
            let t = (knot(p) - knot(p - 1)) / (knot(p + 1) - knot(p - 1));
            let (c, b) = row(&[(p - 1, 1.0 - t), (p + 1, t), (p, -1.0)]);
            constraints.push(Constraint::new(c, b, ViolationKind::NotConvex, i));
        }
        for (j, &k) in strikes[i].iter().enumerate() {
            constraints.push(Constraint::new(vec![(off + j, 1.0)], -(x - k).max(0.0), ViolationKind::BelowIntrinsic, i));
        }
        if i > 0 {
            let (pl, pu) = bounds[i - 1];
            for (j, &k) in strikes[i].iter().enumerate() {
                if k > pl && k < pu {
                    let (prev, constant) = interpolation_row(k, &strikes[i - 1], offsets[i - 1], pl, pu, x);
                    let mut coeffs = vec![(off + j, 1.0)];
                    coeffs.extend(prev.into_iter().map(|(idx, w)| (idx, -w)));
                    constraints.push(Constraint::new(coeffs, -constant, ViolationKind::Calendar, i));
                }
            }
        }
    }
    Ok(FeasibilityProblem {
        spot: x,
        years: grid.maturities.iter().map(|q| q.years).collect(),
        bounds: bounds.to_vec(),
        strikes,
        cells,
        constraints,
        offsets,
    })
}

/// Finds prices meeting every inequality with slack at least `margin`
/// inside the bid/ask boxes. Each sweep projects onto every half-space
/// (targeted at `1.1·margin`) in order and then clamps to the boxes.
pub fn solve_feasible_prices(problem: &FeasibilityProblem, margin: f64) -> Result<AdmissiblePrices, FeasibilityError> {
    solve_with_sweep_limit(problem, margin, MAX_SWEEPS)
}

/// [`solve_feasible_prices`] with a custom sweep cap.
pub fn solve_with_sweep_limit(problem: &FeasibilityProblem, margin: f64, max_sweeps: usize) -> Result<AdmissiblePrices, FeasibilityError> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(FeasibilityError::InvalidMargin(margin));
    }
    let target = TIGHTENING * margin;
    let mut c = problem.initial_prices();
    let mut violation = f64::INFINITY;
    for sweep in 0..=max_sweeps {
        violation = problem.max_violation(&c, target);
        if violation < 0.1 * margin {
            let surface = problem.surface(&c);
            return Ok(AdmissiblePrices::new(surface, margin * (1.0 - CHECK_RELAXATION))?);
        }
        if sweep == max_sweeps {
            break;
        }
        for k in &problem.constraints {
            let short = target - k.slack(&c);
            if short > 0.0 && k.norm_sq > 0.0 {
                let step = short / k.norm_sq;
                for &(i, a) in &k.coeffs {
                    c[i] += step * a;
                }
            }
        }
        for (v, cell) in c.iter_mut().zip(&problem.cells) {
            *v = v.clamp(cell.lo, cell.hi);
        }
    }
    Err(FeasibilityError::Infeasible { sweeps: max_sweeps, max_violation: violation })
}
