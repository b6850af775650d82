//! Streaming automatic modulation classification with recurrent networks
//! and early-stopping ("just enough") decision policies.

pub mod digest;
pub mod error;
pub mod pipeline;
pub mod eval;
pub mod policies;
pub mod rnn;
pub mod signal_gen;

pub use error::{Error, Result};
