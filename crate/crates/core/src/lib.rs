//! Simulation and analysis toolkit for a polarization scrambling
//! interferometer: an instrument that turns fast fluctuations of a probe's
//! state of polarization into the RF spectrum of a heterodyne beat.
//!
//! * [`stokes`]: Jones/Stokes algebra and sphere rotations.
//! * [`nldp`]: generators for fast SOP perturbations.
//! * [`instrument`]: beat synthesis, scrambler draws and scan averaging.
//! * [`spectral`]: PSD estimation, subtraction, Lorentzian fits, spikes.
//! * [`oracle`]: Monte Carlo reference for the sphere-averaged beat ACF.
//! * [`experiment`]: TOML scenarios, artifacts and plots.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod instrument;
pub mod nldp;
pub mod oracle;
pub mod rng;
pub mod spectral;
pub mod stokes;

pub use error::{Error, Result};
