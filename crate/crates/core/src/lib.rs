//! Greedy low-rank learning and gradient-flow simulators for symmetric
//! matrix factorization.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baselines;
pub mod counterexamples;
pub mod dynamics;
pub mod error;
pub mod expcli;
pub mod glrl;
pub mod losses;
pub mod par;
pub mod rng;
pub mod symmat;

pub use error::{Error, Result};
pub use losses::{LossKind, LossSpec, Measurement};
pub use symmat::{EigDecomp, SymMat};
