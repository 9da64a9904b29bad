//! Model-based clustering of periodic time-course profiles.
//!
//! Each profile is a Fourier mean curve plus a gene-specific AR(1) random
//! effect, a random effect shared by every gene in the cluster, and white
//! noise. Mixtures of these are fitted by EM; an AR(1)-residual regression
//! mixture is available as a baseline.

// Negated comparisons are deliberate: NaN must fail every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ar1;
pub mod em;
pub mod error;
pub mod fourier;
pub mod io;
pub mod kim;
pub mod metrics;
pub mod model;
pub mod period;
pub mod synth;

pub use error::{Error, Result};
