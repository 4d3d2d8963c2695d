//! Lambda quantile risk measurement with historical simulation.
//!
//! The crate estimates lambda quantiles of portfolio P&L, their risk
//! contributions and the associated homogeneity degree, then drives the
//! whole computation over a time series of valuation dates.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod density;
pub mod error;
pub mod lambda_fn;
pub mod market_data;
pub mod normal;
pub mod pipeline;
pub mod portfolio_ops;
pub mod pricing;
pub mod risk_engine;

pub use error::{Error, Result};
pub use lambda_fn::{calibrate_exp, ExpParams, LambdaFunction};
pub use market_data::{PriceSeries, ScenarioPanel, ShockMode};
pub use portfolio_ops::{Composition, OperatorKind, PortfolioOperator};
pub use pricing::{bs_call, OptionSpec};
pub use risk_engine::{EmpiricalModel, GaussianModel, RiskModel, RiskReport};
