//! Exemplar-conditioned adaptive decoding.
//!
//! An encoder-decoder text generator whose decoder recurrence is rebuilt for
//! every input: weight matrices are mixtures of learned rank-1 factors, and
//! the mixing coefficients come from a training target retrieved by
//! bag-of-words similarity of the sources.

pub mod corpus;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod par;
pub mod retrieval;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
