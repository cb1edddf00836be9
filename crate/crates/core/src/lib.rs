//! Wavefront phase recovery from subsampled Shack-Hartmann slope measurements.
//!
//! The crate is organised bottom-up:
//!
//! - [`field`]: lattice fields, circular apertures and reference gradients.
//! - [`turbulence`]: modified Von Karman phase screens (FFT method with subharmonics).
//! - [`zernike`]: Zernike evaluation, analytic gradients and least-squares slope fitting.
//! - [`shi`]: lenslet geometry, block plane-fit slope sensing, decimation and noise.
//! - [`wavelet`]: periodic orthonormal 2-D `sym5` transform used as the sparsifying basis.
//! - [`solver`]: FISTA for BPDN, the independent-channel (CCS) recovery and the
//!   curl-constrained (DCS) Bregman recovery.
//! - [`optics`]: pupil function, amplitude spread function and PSF.
//! - [`deconv`]: periodic blur operator, Chambolle TV denoising and FISTA TV deconvolution.
//! - [`metrics`]: MSE, PSNR and SSIM.
//! - [`io`]: binary field files, PGM images and CSV exports.
//! - [`par`]: data-parallel helpers with a sequential fallback.

pub mod deconv;
pub mod error;
mod fft;
pub mod field;
pub mod io;
pub mod metrics;
pub mod optics;
pub mod par;
pub mod shi;
pub mod solver;
pub mod turbulence;
pub mod wavelet;
pub mod zernike;

pub use error::{Error, Result};
pub use field::{field_gradient, make_circular_aperture, ApertureSpec, Field2D};
