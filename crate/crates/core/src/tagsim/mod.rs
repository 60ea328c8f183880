//! Synthetic time-tag generation and the binary tag file format.

pub mod format;
pub mod sim;

pub use format::*;
pub use sim::*;
