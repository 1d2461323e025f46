//! Calibration and pricing for Local Variance Gamma models.

// `!(a < b)` is used on purpose so NaN inputs fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod market_data;
pub mod feasibility;
pub mod gamma_mc;
pub mod numerics;
pub mod pdde_pricer;
pub mod piecewise_exp;
pub mod scalar;
pub mod smile_interp;
pub mod surface;

pub use scalar::Real;

pub type Slice = piecewise_exp::Slice<f64>;
pub type ExpBranch = piecewise_exp::ExpBranch<f64>;
