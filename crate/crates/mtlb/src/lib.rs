//! Dispersion, mode structure and simulation of an electron beam coupled to
//! a multi-conductor transmission line.

pub mod beam;
pub mod dispersion;
pub mod dw;
pub mod error;
pub mod modes;
pub mod mtl;
pub mod par;
pub mod pierce;
pub mod poly;
pub mod sweep;
pub mod timedomain;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use mtl::{spectral_data, validate_mtl, BeamParams, MtlParams, MtlSpectralData, Plasma, Strictness};
