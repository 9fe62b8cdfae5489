//! Plug-and-Play image restoration with analysis (gradient-domain) priors.
//!
//! The crate provides the analysis-prior reconstruction drivers (HQS and ADMM
//! with a denoiser acting on the image gradient) next to their image-domain
//! counterparts, closed-form Fourier solvers for the deblurring and
//! super-resolution data subproblems, pluggable denoisers, quality metrics and
//! a benchmark harness.

pub mod cli;
pub mod denoise;
pub mod error;
pub mod imgcore;
pub mod metrics;
pub mod operators;
pub mod pnp;
pub mod subproblem;

pub use error::{ArchiveError, Error, Result};
pub use imgcore::{BlurKernel, Image, Spectrum};
pub use denoise::{DenoiserHandle, Domain, WeightArchive};
pub use operators::{DegradationSpec, GradientField};
pub use pnp::{Algorithm, RunConfig, RunTrace};
