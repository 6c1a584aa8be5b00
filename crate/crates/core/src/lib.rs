//! Restricted estimation of the coefficient matrix in multivariate regression
//! with errors in the covariates, together with the joint limit law of the
//! estimators and asymptotic distributional risk comparisons.

pub mod asymptotics;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod estimators;
pub mod io;
pub mod matcore;
pub mod model;
pub mod montecarlo;
pub mod risk;
pub mod seeding;
pub mod verify;

pub use error::{Error, Result};
