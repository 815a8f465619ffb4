//! Provable bounds on root reconstruction for broadcasting on d-ary trees.
//!
//! A uniform bit sits at the root of an infinite d-ary tree and every edge
//! copies it through a binary symmetric channel `BSC_δ`. This crate bounds the
//! limiting MAP error probability and root–leaves mutual information from both
//! sides by running belief propagation on quantized channel representations:
//! degrading steps give upper bounds on the error (lower bounds on the
//! information) and upgrading steps give the opposite ones.
//!
//! Modules, bottom-up:
//!
//! * [`bms`]: channels as atomic measures over the crossover Δ, functionals;
//! * [`bp`]: one BP layer on measures and the closed-form layer functions;
//! * [`quantize`]: the four interval quantizers;
//! * [`dynamics`]: scalar and measure-valued recursions, fixed points;
//! * [`oracle`]: exhaustive enumeration for small trees;
//! * [`criticality`]: thresholds, τ-sweeps and slope fits near criticality.

pub mod bms;
pub mod bp;
pub mod criticality;
pub mod dynamics;
mod error;
pub mod oracle;
pub mod quantize;

pub use bms::{bec, binary_entropy, bsc, delta_c, ChannelFunctionals, DeltaMeasure, TreeParams};
pub use error::{Error, Result};
