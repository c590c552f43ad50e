//! State-space modelling of in-game betting stakes.
//!
//! Relative stakes placed on the home team are BEINF-distributed (a beta
//! distribution with point masses at 0 and 1) with a mean driven by
//! pre-game strength, in-game covariates and a latent AR(1) market
//! sentiment. The likelihood is evaluated by discretizing the state space
//! on a midpoint grid and running the HMM forward algorithm; fitting is
//! penalized maximum likelihood with P-spline time-varying effects.
//!
//! Modules:
//! - [`beinf`]: the inflated beta distribution
//! - [`splines`]: cubic B-spline bases and the curvature penalty
//! - [`model`]: parameters, predictors, state grid, transition structure
//! - [`likelihood`]: forward algorithm, joint and penalized objectives
//! - [`estimation`]: transforms, fitting, confidence intervals, tuning
//! - [`forecast`]: one-step-ahead prediction and outlier flags
//! - [`simulate`]: synthetic data and recovery studies
//! - [`data`]: CSV ingestion, preprocessing, descriptives
//! - [`strategy`]: threshold betting backtests

pub mod beinf;
pub mod data;
pub mod error;
pub mod estimation;
pub mod forecast;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod simulate;
pub mod splines;
pub mod strategy;

pub use error::{Error, Result};

/// Matches are modelled through minute 85; later minutes carry too little
/// stake volume and are truncated.
pub const MATCH_MINUTES: usize = 85;
