//! Single-shot bounds on the minimum excess-distortion probability of codes
//! that must both reconstruct a source `X` and infer a correlated hidden
//! component `Y` from the same `M`-ary message.
//!
//! Module map:
//! - [`source`]: joint sources, distortion measures, excess kernels.
//! - [`rd`]: direct, indirect and joint rate-distortion solvers.
//! - [`tilted`]: information densities and tilted informations.
//! - [`ach`] / [`conv`]: upper and lower bounds on `ε*(M, D1, D2)`.
//! - [`oracle`]: exhaustive `ε*` on small instances.
//! - [`sim`]: Monte Carlo runs of the random-coding constructions.

pub mod ach;
pub mod conv;
pub mod curve;
pub mod error;
pub mod oracle;
pub mod rd;
pub mod sim;
pub mod source;
pub mod tilted;

pub use error::{Error, Result};
