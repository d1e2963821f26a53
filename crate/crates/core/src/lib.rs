//! Computational laboratory for quantitative multiple ergodic averages.
//!
//! The crate is organised around the objects the experiments need:
//!
//! - [`systems`]: Markov shifts and hyperbolic toral automorphisms, with
//!   exact invariant-measure sampling and exact means.
//! - [`sequences`]: non-clustered integer sequences and the counting
//!   conditions on correlation scales.
//! - [`correlations`]: multiple correlations (Monte Carlo and exact
//!   oracles), joint cumulants and decay-rate fits.
//! - [`averages`]: multiple ergodic averages along sequences and their
//!   normalised rate statistics.
//! - [`dyadic`]: dyadic block decompositions and the variance machinery
//!   used to pass from second-moment bounds to pointwise rates.
//! - [`matrix_growth`]: norm growth of matrix powers and commuting pairs.

pub mod averages;
pub mod correlations;
pub mod dyadic;
pub mod error;
pub mod matrix_growth;
pub mod seeding;
pub mod sequences;
pub mod systems;

pub use error::{Error, Result};
