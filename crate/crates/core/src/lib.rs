#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Simulation and analysis toolkit for a liquid-filled Fabry-Perot
//! microcavity used as a narrow-band photon-pair source.
//!
//! * [`cavity`]: spectral properties of the passive resonator.
//! * [`bistability`]: power-shifted lineshape, scans and lineshift extraction.
//! * [`rates`]: four-wave-mixing pair flux and the background-limited CAR.
//! * [`tagsim`]: Monte Carlo detector time-tag streams and their file format.
//! * [`correlator`]: coincidence histograms, peak fits and CAR estimates.
//! * [`config`]: flat key=value run configuration.
//! * [`figures`]: end-to-end pipelines behind the command-line reports.

pub mod bistability;
pub mod cavity;
pub mod config;
pub mod correlator;
pub mod figures;
pub mod rates;
pub mod tagsim;
