//! Hidden Markov mixture autoregressive models: a mixture of K Gaussian
//! AR(p) components whose weights are filtered probabilities of a hidden
//! first-order Markov chain.
//!
//! The crate provides model definition and validation ([`model`]), the
//! scaled forward filter and one-step forecasting ([`filter`]), seedable
//! simulation ([`sim`]), moment-stability analysis for p = 1 ([`stability`]),
//! EM estimation with a Baum-Welch E-step ([`estimate`]), brute-force
//! verification oracles ([`oracle`]), and the forecast-error benchmark
//! ([`benchmark`]).

pub mod benchmark;
pub mod error;
pub mod estimate;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod sim;
pub mod stability;

pub use error::{HmmError, Result};
pub use model::HmMarModel;
