//! Simulation and optimization toolkit for multiuser wideband movable-antenna
//! (MA) downlinks.
//!
//! The crate is organized along the processing chain:
//!
//! - [`scenario`]: OFDM/grid configuration, random multipath draws and the
//!   ground-truth channel tensor over all candidate positions.
//! - [`estimation`]: pilot synthesis over a subset of probed positions, the
//!   angular dictionary, simultaneous OMP with per-subcarrier LS refit, NMSE.
//! - [`selection`]: antenna-to-position assignments, equivalent channels and
//!   random / greedy / exhaustive / cross-entropy selectors.
//! - [`beamforming`]: SINR and sum rate, ZF, WMMSE with bisection power
//!   control, and the parametric beamformer with parameter extraction and
//!   refinement.
//! - [`experiments`]: seeded Monte Carlo sweeps and CSV emission.
//! - [`io`]: binary tensor persistence and sidecars.

pub mod beamforming;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod scenario;
pub mod seed;
pub mod selection;

pub use error::{Error, Result};
pub use linalg::C64;
