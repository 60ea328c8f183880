//! Coincidence histograms of two time-tag streams, Lorentzian peak fits,
//! coincidence-to-accidental ratios and power-scan regression.

pub mod car;
pub mod fit;
pub mod histogram;
pub mod report;
pub mod scan;

pub use car::*;
pub use fit::*;
pub use histogram::*;
pub use report::*;
pub use scan::*;
