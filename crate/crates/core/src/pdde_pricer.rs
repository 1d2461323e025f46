//! Finite-difference solvers for the difference-in-time, differential-in-space
//! equations of LVG models.
//!
//! One step over a characteristic time `t*` solves
//! `(a²/2) u'' − (u − φ)/t* = 0` on `(L, U)` with Dirichlet data. The scheme
//! is a finite-volume three-point stencil on a (possibly non-uniform) grid;
//! `a²` is sampled at interval midpoints, so a grid containing every jump of
//! a piecewise constant coefficient sees it exactly and keeps second order.

use thiserror::Error;

use crate::scalar::Real;
use crate::surface::NonHomLvgModel;

/// Default number of interior grid nodes.
pub const DEFAULT_GRID_NODES: usize = 2000;
/// Breakpoints closer than this fraction of the domain are merged when
/// aligning a grid; a near-empty cell would wreck the stencil's conditioning.
pub const MERGE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PddeError {
    #[error("singular tridiagonal system at row {row}")]
    SingularSystem { row: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("interval bounds [{lo}, {hi}] are not grid nodes")]
    BoundsNotOnGrid { lo: f64, hi: f64 },
}

/// Strictly increasing nodes `x_0 = L < … < x_{n+1} = U`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid<F> {
    nodes: Vec<F>,
}

impl<F: Real> SpatialGrid<F> {
    pub fn new(nodes: Vec<F>) -> Result<Self, PddeError> {
        if nodes.len() < 3 {
            return Err(PddeError::InvalidGrid("need at least one interior node".into()));
        }
        if nodes.iter().any(|v| !v.is_finite()) || nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PddeError::InvalidGrid("nodes must be finite and strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    pub fn uniform(lo: F, hi: F, interior: usize) -> Result<Self, PddeError> {
        let n = F::from_usize(interior + 1).expect("usize fits");
        let nodes = (0..=interior + 1)
            .map(|i| if i == interior + 1 { hi } else { lo + (hi - lo) * F::from_usize(i).expect("usize fits") / n })
            .collect();
        Self::new(nodes)
    }

    /// Grid over `[lo, hi]` containing every breakpoint inside it, with about
    /// `interior` nodes spread proportionally to segment length.
    pub fn aligned(lo: F, hi: F, breakpoints: &[F], interior: usize) -> Result<Self, PddeError> {
        if !(lo < hi) {
            return Err(PddeError::InvalidGrid("lo must be below hi".into()));
        }
        let total = hi - lo;
        let gap = total * F::lit(MERGE_TOLERANCE);
        let mut inner: Vec<F> = breakpoints.iter().copied().filter(|&b| b > lo + gap && b < hi - gap).collect();
        inner.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        let mut marks: Vec<F> = vec![lo];
        for b in inner {
            if b - marks[marks.len() - 1] > gap {
                marks.push(b);
            }
        }
        marks.push(hi);
        let budget = F::from_usize(interior + 1).expect("usize fits");
        let mut nodes = vec![lo];
        for w in marks.windows(2) {
            let cells = ((w[1] - w[0]) / total * budget).ceil().to_usize().unwrap_or(1).max(1);
            let c = F::from_usize(cells).expect("usize fits");
            for i in 1..cells {
                nodes.push(w[0] + (w[1] - w[0]) * F::from_usize(i).expect("usize fits") / c);
            }
            nodes.push(w[1]);
        }
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[F] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lower(&self) -> F {
        self.nodes[0]
    }

    pub fn upper(&self) -> F {
        self.nodes[self.nodes.len() - 1]
    }

    /// Largest spacing.
    pub fn max_step(&self) -> F {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(F::zero(), F::max)
    }

    fn index_of(&self, v: F) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.partial_cmp(&v).expect("finite")).ok()
    }
}

/// Solves `lower[i] u[i-1] + diag[i] u[i] + upper[i] u[i+1] = rhs[i]`.
pub fn solve_tridiagonal<F: Real>(lower: &[F], diag: &[F], upper: &[F], rhs: &[F]) -> Result<Vec<F>, PddeError> {
    let n = diag.len();
    let mut c = vec![F::zero(); n];
    let mut d = vec![F::zero(); n];
    let mut prev_c = F::zero();
    let mut prev_d = F::zero();
    for i in 0..n {
        let l = if i > 0 { lower[i] } else { F::zero() };
        let pivot = diag[i] - l * prev_c;
        if pivot == F::zero() || !pivot.is_finite() {
            return Err(PddeError::SingularSystem { row: i });
        }
        c[i] = if i + 1 < n { upper[i] / pivot } else { F::zero() };
        d[i] = (rhs[i] - l * prev_d) / pivot;
        prev_c = c[i];
        prev_d = d[i];
    }
    let mut u = d;
    for i in (0..n.saturating_sub(1)).rev() {
        u[i] = u[i] - c[i] * u[i + 1];
    }
    Ok(u)
}

/// One step of `(a²/2) u'' − (u − φ)/t* = 0` on `nodes` with boundary values
/// `left` and `right`. Returns the full vector including the boundary nodes.
pub fn solve_step<F: Real, A: Fn(F) -> F>(nodes: &[F], t_star: F, a2: A, source: &[F], left: F, right: F) -> Result<Vec<F>, PddeError> {
    let m = nodes.len();
    if source.len() != m {
        return Err(PddeError::LengthMismatch { expected: m, got: source.len() });
    }
    if m < 3 {
        return Err(PddeError::InvalidGrid("need at least one interior node".into()));
    }
    let two = F::lit(2.0);
    let inv_a2: Vec<F> = nodes.windows(2).map(|w| F::one() / a2((w[0] + w[1]) / two)).collect();
    let n = m - 2;
    let (mut lo, mut di, mut up, mut rhs) = (vec![F::zero(); n], vec![F::zero(); n], vec![F::zero(); n], vec![F::zero(); n]);
    for i in 0..n {
        let k = i + 1;
        let (hm, hp) = (nodes[k] - nodes[k - 1], nodes[k + 1] - nodes[k]);
        let span = hm + hp;
        let weight = (hm * inv_a2[k - 1] + hp * inv_a2[k]) / span;
        let (cl, cu) = (F::one() / (hm * span), F::one() / (hp * span));
        // negated so the matrix is a diagonally dominant M-matrix
        lo[i] = -cl;
        up[i] = -cu;
        di[i] = cl + cu + weight / t_star;
        rhs[i] = weight * source[k] / t_star;
    }
    rhs[0] = rhs[0] + (-lo[0]) * left;
    rhs[n - 1] = rhs[n - 1] + (-up[n - 1]) * right;
    let inner = solve_tridiagonal(&lo, &di, &up, &rhs)?;
    let mut out = Vec::with_capacity(m);
    out.push(left);
    out.extend(inner);
    out.push(right);
    Ok(out)
}

/// Backward step for a European payoff: the boundary nodes keep the source
/// values (the process is absorbed there).
pub fn solve_backward_step<F: Real, A: Fn(F) -> F>(grid: &SpatialGrid<F>, t_star: F, a2: A, source: &[F]) -> Result<Vec<F>, PddeError> {
    let n = grid.len();
    if source.len() != n {
        return Err(PddeError::LengthMismatch { expected: n, got: source.len() });
    }
    solve_step(grid.nodes(), t_star, a2, source, source[0], source[n - 1])
}

/// Forward step in strike: call prices one characteristic time later,
/// with boundary values `x − L` and `0`.
pub fn dupire_forward_step<F: Real, A: Fn(F) -> F>(grid: &SpatialGrid<F>, spot: F, t_star: F, a2: A, prev_calls: &[F]) -> Result<Vec<F>, PddeError> {
    solve_step(grid.nodes(), t_star, a2, prev_calls, spot - grid.lower(), F::zero())
}

/// Dynamics on one maturity interval.
pub struct Interval<'a> {
    pub t_star: f64,
    pub lower: f64,
    pub upper: f64,
    pub a2: Box<dyn Fn(f64) -> f64 + Sync + 'a>,
}

/// Option values at every grid node for each maturity of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PddeSolution {
    pub nodes: Vec<f64>,
    /// `values[m][k]`: price at node `k` of the payoff paid at maturity `m`.
    pub values: Vec<Vec<f64>>,
    pub t_stars: Vec<f64>,
}

impl PddeSolution {
    /// Linear interpolation of `values[m]` at `x`.
    pub fn value_at(&self, m: usize, x: f64) -> Option<f64> {
        let nodes = &self.nodes;
        if !(x >= nodes[0] && x <= nodes[nodes.len() - 1]) {
            return None;
        }
        let j = nodes.partition_point(|&v| v <= x).clamp(1, nodes.len() - 1);
        let t = (x - nodes[j - 1]) / (nodes[j] - nodes[j - 1]);
        let v = &self.values[m];
        Some(v[j - 1] + t * (v[j] - v[j - 1]))
    }
}

/// Prices of `payoff` paid at each maturity of `schedule`. The value at
/// maturity `m` is obtained by stepping back through intervals `m, …, 1`,
/// each solved on the grid nodes inside its bounds.
pub fn propagate_european(grid: &SpatialGrid<f64>, payoff: &[f64], schedule: &[Interval]) -> Result<PddeSolution, PddeError> {
    if payoff.len() != grid.len() {
        return Err(PddeError::LengthMismatch { expected: grid.len(), got: payoff.len() });
    }
    let mut ranges = Vec::with_capacity(schedule.len());
    for iv in schedule {
        match (grid.index_of(iv.lower), grid.index_of(iv.upper)) {
            (Some(a), Some(b)) if b >= a + 2 => ranges.push((a, b)),
            _ => return Err(PddeError::BoundsNotOnGrid { lo: iv.lower, hi: iv.upper }),
        }
    }
    let mut values = Vec::with_capacity(schedule.len());
    for m in 0..schedule.len() {
        let mut u = payoff.to_vec();
        for j in (0..=m).rev() {
            let (a, b) = ranges[j];
            let nodes = &grid.nodes()[a..=b];
            let stepped = solve_step(nodes, schedule[j].t_star, &schedule[j].a2, &u[a..=b], u[a], u[b])?;
            u[a..=b].copy_from_slice(&stepped);
        }
        values.push(u);
    }
    Ok(PddeSolution { nodes: grid.nodes().to_vec(), values, t_stars: schedule.iter().map(|s| s.t_star).collect() })
}

/// Grid over the widest bounds of `model`, aligned with every slice knot,
/// the spot and `extra` points.
pub fn model_grid(model: &NonHomLvgModel, extra: &[f64], interior: usize) -> Result<SpatialGrid<f64>, PddeError> {
    let (lo, hi) = model.bounds(model.len() - 1);
    let mut marks: Vec<f64> = model.slices().iter().flat_map(|s| s.knots().iter().copied()).collect();
    marks.push(model.spot());
    marks.extend_from_slice(extra);
    SpatialGrid::aligned(lo, hi, &marks, interior)
}

/// Maturity schedule of `model` with its analytic local variances.
pub fn model_schedule(model: &NonHomLvgModel) -> Vec<Interval<'_>> {
    (0..model.len())
        .map(|m| {
            let (lower, upper) = model.bounds(m);
            Interval {
                t_star: model.t_star(m),
                lower,
                upper,
                a2: Box::new(move |k| model.local_variance(m, k).unwrap_or(f64::NAN)),
            }
        })
        .collect()
}

/// Prices of a European payoff under `model` at every maturity.
pub fn price_european<P: Fn(f64) -> f64>(model: &NonHomLvgModel, payoff: P, extra_nodes: &[f64], interior: usize) -> Result<PddeSolution, PddeError> {
    let grid = model_grid(model, extra_nodes, interior)?;
    let phi: Vec<f64> = grid.nodes().iter().map(|&v| payoff(v)).collect();
    propagate_european(&grid, &phi, &model_schedule(model))
}

/// Call prices on a strike grid for every maturity, chaining forward steps
/// from the intrinsic value.
pub fn dupire_chain(model: &NonHomLvgModel, interior: usize) -> Result<PddeSolution, PddeError> {
    let grid = model_grid(model, &[], interior)?;
    let x = model.spot();
    let mut calls: Vec<f64> = grid.nodes().iter().map(|&k| (x - k).max(0.0)).collect();
    let schedule = model_schedule(model);
    let mut values = Vec::with_capacity(schedule.len());
    for iv in &schedule {
        let (a, b) = match (grid.index_of(iv.lower), grid.index_of(iv.upper)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(PddeError::BoundsNotOnGrid { lo: iv.lower, hi: iv.upper }),
        };
        let nodes = &grid.nodes()[a..=b];
        let stepped = solve_step(nodes, iv.t_star, &iv.a2, &calls[a..=b], x - iv.lower, 0.0)?;
        calls[a..=b].copy_from_slice(&stepped);
        values.push(calls.clone());
    }
    Ok(PddeSolution { nodes: grid.nodes().to_vec(), values, t_stars: schedule.iter().map(|s| s.t_star).collect() })
}
