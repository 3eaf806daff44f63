// NaN must fail range checks, so `!(x > 0.0)` is used on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod covariate;
pub mod distributions;
pub mod em;
pub mod error;
pub mod gibbs;
pub mod individual;
pub mod io;
pub mod metrics;
pub mod model;
pub mod num;
pub mod rng;
pub mod sim;
pub mod summary;

pub use error::{Error, Result};
pub use num::Real;

/// Double-precision aliases for the generic domain types.
pub type ClassProbs64 = model::ClassProbs<f64>;
pub type MisclassMatrix64 = model::MisclassMatrix<f64>;
pub type Hyperparams64 = model::Hyperparams<f64>;
pub type PosteriorSummary64 = summary::PosteriorSummary<f64>;

/// Single-precision aliases.
pub type ClassProbs32 = model::ClassProbs<f32>;
pub type MisclassMatrix32 = model::MisclassMatrix<f32>;
pub type Hyperparams32 = model::Hyperparams<f32>;
pub type PosteriorSummary32 = summary::PosteriorSummary<f32>;
