//! Heterogeneous multi-output Gaussian processes with LMC and
//! convolution-process priors, trained by stochastic variational inference.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod error;
pub mod hyper_vo;
pub mod kernels;
pub mod likelihoods;
pub mod linalg;
pub mod mogp;
pub mod optimizers;

pub use error::{Error, Result};
