//! Multilevel logistic cluster-weighted models with dependent dichotomous
//! covariates.
//!
//! Each mixture component couples a random-intercept logistic regression for
//! the binary response with a multivariate normal over continuous covariates,
//! independent multinomials over categorical covariates and an Ising model
//! over binary covariates. Estimation is classification EM with multi-start
//! and BIC selection over the number of components.

pub mod data;
pub mod dgp;
pub mod dists;
pub mod em;
pub mod error;
pub mod glmm;
pub mod inference;
pub mod model;
pub mod optim;

pub use error::{Error, Result};
