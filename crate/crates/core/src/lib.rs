//! Decay of multipartite entanglement of N-qubit states under local
//! Markovian decoherence.
//!
//! - [`state`]: pure states, density matrices, partial traces.
//! - [`environment`]: the three local environments and two propagators.
//! - [`concurrence`]: pure-state multipartite concurrence and oracles.
//! - [`roof`]: convex-roof estimation for mixed states.
//! - [`decay`]: exponential fits, separability times, N-sweeps.
//! - [`harness`]: run specifications, CSV/JSON artifacts, CLI commands.

pub mod concurrence;
pub mod decay;
pub mod environment;
pub mod error;
pub mod harness;
pub mod random;
pub mod roof;
pub mod state;

pub use error::{Error, Result};
