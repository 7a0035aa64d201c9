//! Epsilon-skew Huber (ESH) M-estimation.
//!
//! Joint estimation of location, scale and skewness with an asymmetric
//! Huber loss, closed-form asymptotic covariance under an epsilon-skew
//! normal reference, comparison likelihood fits and a Monte Carlo harness.

pub mod asymptotics;
pub mod distributions;
pub mod error;
pub mod loss;
pub mod montecarlo;
mod eqsolve;
mod optim;
pub mod regression;
pub mod specfun;
pub mod univariate;

pub use error::{EshError, Result};
pub use loss::{HuberParams, LossParams};
