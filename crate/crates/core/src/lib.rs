//! Semiparametric Bernstein-von Mises laboratory: shifted deconvolution and
//! attenuated X-ray transforms with Gaussian series priors.

pub mod bayes;
pub mod bvm_lab;
pub mod config;
pub mod deconv;
pub mod efficiency;
pub mod error;
pub mod model;
pub mod quad;
pub mod spectral;
pub mod xray;

pub use error::{Error, Result};
