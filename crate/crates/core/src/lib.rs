//! Numerical laboratory for the Gaussian additive model Y = √λ X + Z with
//! uniform discrete priors on the unit sphere, and for the all-or-nothing
//! transition of sparse tensor PCA.

pub mod channel;
pub mod divergence;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod numeric;
pub mod prior;
pub mod rng;
pub mod secondmoment;
pub mod tensor;
pub mod trial;

pub use error::{Error, Result};
