//! Compressive beam alignment for planar phased arrays using 2D convolutional
//! compressed sensing.

pub mod baseline;
pub mod error;
pub mod eval;
pub mod io;
pub mod channel;
pub mod cli;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod sensing;
#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};
pub use linalg::ComplexMatrix;
