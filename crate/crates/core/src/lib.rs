//! Low-light video enhancement guided by synthetic events.
//!
//! The pipeline renders paired normal/low-light clips ([`scenegen`]), turns
//! them into event voxel grids ([`eventsim`]), restores the low-light voxels
//! and fuses them with the dark frame ([`netcore`]), trained in two stages
//! ([`training`]) and scored with PSNR/SSIM ([`metrics`]). Everything runs on
//! the small tensor core in [`numgrid`].

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod error;
pub mod eventsim;
pub mod image;
pub mod io;
pub mod metrics;
pub mod netcore;
pub mod numgrid;
pub mod scenegen;
pub mod training;

pub use error::{Error, FormatError, Result};
