//! Chernoff-bound safety stocks for correlated multi-commodity demand.
//!
//! Demand models live in [`demand`], cumulant generating functions in [`cgf`],
//! rate functions and stockout bounds in [`rate`], exact and simulated
//! stockout probabilities in [`oracle`], and the safety-stock policies in
//! [`policy`].

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgf;
pub mod demand;
pub mod error;
pub mod oracle;
pub mod policy;
pub mod quadrature;
pub mod rate;

pub use cgf::{Cgf, Domain, EmpiricalCgf, GaussianCgf, WeibullCgf};
pub use demand::{DemandModel, EmpiricalDemand, GaussianModel, LeadTime, ModelSpec, WeibullModel};
pub use error::{Error, Result};
pub use oracle::{OracleMethod, OracleResult, RigorousStock, TailQuery};
pub use policy::{Allocation, PolicyOutput, ProposedStock};
pub use rate::{ChernoffBound, RateResult, Side, SolverConfig, StockoutPattern, StockoutQuery};
