//! Sign clusters of the Gaussian free field on the metric graph of `Z^d`:
//! exact samplers, potential-theory kernels, cluster labeling and Monte
//! Carlo estimators of arm probabilities, volumes and exponents.

pub mod clusters;
pub mod dst;
pub mod error;
pub mod gff;
pub mod greens;
pub mod lattice;
pub mod montecarlo;
pub mod par;
pub mod quad;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
