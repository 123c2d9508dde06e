//! Joint baseband/electromagnetic codebook design for arrays whose elements
//! can reconfigure their radiation pattern, together with Fisher-information
//! position error bounds and a two-stage maximum-likelihood localizer for a
//! downlink MISO OFDM link.
//!
//! Two element reconfigurability models are supported:
//!
//! - **synthesis**: every element forms its pattern as a unit-norm weighted
//!   sum of complex spherical harmonics ([`shod`]);
//! - **finite-state**: every element selects one pattern from a library of
//!   measured or synthetic states ([`patterns`]).
//!
//! A conventional array with fixed omnidirectional elements is available as
//! a baseline through [`response::ElementModel::Omni`].

pub mod codebook;
pub mod error;
pub mod fim;
pub mod harness;
pub mod localization;
pub mod nelder_mead;
pub mod patterns;
pub mod power_alloc;
pub mod response;
pub mod scene;
pub mod shod;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
