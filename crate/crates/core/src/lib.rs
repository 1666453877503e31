//! Distributed dual coordinate optimization for regularized linear
//! classification.
//!
//! Workers run dual coordinate ascent on their shard of the data; a
//! coordinator averages their dual directions each round and certifies
//! progress with an exact duality gap. An outer proximal-point loop
//! accelerates ill-conditioned problems.

pub mod accel;
pub mod cli;
pub mod comm;
pub mod dadm;
pub mod dataio;
pub mod error;
pub mod localsolver;
pub mod losses;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod plot;
pub mod regularizer;
pub mod rng;

pub use error::{Error, Result};
