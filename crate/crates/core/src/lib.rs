//! Penalized weighted least-squares (PWLS) CT reconstruction and
//! regularization path seeking.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: scan geometry, the ray-driven projector and its exact adjoint,
//!   ordered-subset partitioning.
//! - [`image`]: image grids and HU / attenuation conversions.
//! - [`simulate`]: ellipse phantoms and Poisson projection data.
//! - [`penalty`]: the Huber roughness penalty.
//! - [`solvers`]: objective, OS-SQS, linearized AL / ADMM, FBP and the KKT
//!   tuning-parameter estimator.
//! - [`pathseek`]: ratio-of-gradients and direction-of-gradient path engines.
//! - [`metrics`]: RMSD / MAD and noise power spectra.

pub mod error;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod pathseek;
pub mod penalty;
pub mod simulate;
pub mod solvers;

pub use error::{Error, Result};
pub use geometry::{Beam, DenseOperator, ScanGeometry, SubsetScheme, SystemOperator};
pub use image::{ImageGrid, ImageVolume, Unit, HU_PER_MU, MU_WATER};
pub use penalty::{HuberPenalty, Neighborhood};
pub use simulate::{Ellipse, EllipsePhantom, Sinogram, WeightedData};
pub use solvers::PwlsProblem;
