//! Multiscale 3D feature learning for voxel-wise vessel classification.
//!
//! The pipeline has two phases. An unsupervised phase samples 3D patches from
//! Gaussian pyramids and learns a dictionary of unit-norm filters by mini-batch
//! LASSO dictionary learning, with sparse codes computed by least angle
//! regression. A supervised phase correlates every filter with every pyramid
//! level, reads `scales * atoms` predictors per annotated voxel and fits an
//! L2-regularized logistic regression with Newton's method.
//!
//! Modules map onto pipeline stages:
//!
//! * [`volume_io`]: volumes, masks, MetaImage I/O and annotation CSVs.
//! * [`pyramid`]: separable Gaussian smoothing and pyramids.
//! * [`sparse_coding`]: patch sampling, LARS-LASSO and dictionary training.
//! * [`featurize`]: filter responses and per-voxel feature rows.
//! * [`classifier`]: Newton logistic regression and k-fold cross validation.
//! * [`evaluation`]: repeated random-split accuracy protocol and phantoms.

pub mod classifier;
pub mod error;
pub mod evaluation;
pub mod featurize;
mod linalg;
pub mod provenance;
pub mod pyramid;
pub mod sparse_coding;
pub mod volume_io;

pub use error::{Error, Result};
