//! Two-way fixed-effects estimation of single-index panel models with
//! corrections for the incidental-parameter bias.
//!
//! The crate fits linear, probit, logit and Poisson panel models with unit
//! and period effects by concentrated Newton iteration, estimates the
//! leading bias terms of the fixed-effects estimator, and corrects
//! coefficients and average partial effects analytically or by panel
//! jackknife. A Monte Carlo lab reproduces bias and coverage experiments.
//!
//! ```no_run
//! use fepanel::{estimator, family::Family, panel};
//!
//! let data = panel::load_csv("panel.csv", &panel::CsvSchema::default())?;
//! let fit = estimator::fit(&data, &Family::Logit, &Default::default())?;
//! println!("{:?}", fit.beta);
//! # Ok::<(), fepanel::Error>(())
//! ```

pub mod cli;
pub mod config;
pub mod correction;
pub mod effects;
pub mod error;
pub mod estimator;
pub mod family;
pub mod panel;
pub mod simlab;
pub mod validate;

pub use error::{Error, Result};
