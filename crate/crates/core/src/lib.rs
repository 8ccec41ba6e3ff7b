//! Quadri-allelic sample frequency spectrum for three populations that split
//! from a common ancestor, under a variable population-size history.
//!
//! The pipeline runs lineage-count probabilities ([`lineage`]) into
//! conditional coalescent interval moments ([`conditional_times`]), then into
//! per-pair triallelic probabilities ([`triallelic`]), which [`combiner`]
//! weights into the final spectrum value. [`oracle`] is an independent
//! Monte Carlo simulator used to check every analytic stage.

pub mod combiner;
pub mod conditional_times;
pub mod demography;
pub mod error;
pub mod lineage;
pub mod oracle;
pub mod quadrature;
pub mod sample;
pub mod triallelic;

pub use error::{Error, Result};
