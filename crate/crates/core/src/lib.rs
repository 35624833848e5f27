//! Interacted two-stage least squares for local average treatment effects.
//!
//! The crate estimates the complier average effect (LATE) when an
//! instrument is valid only conditionally on covariates. It provides the
//! additive and interacted 2SLS family, kappa-weighted complier means,
//! propensity-score stratification, a resampling bootstrap, and a Monte
//! Carlo harness with exact population oracles for finite-support designs.
//!
//! ```
//! use ivlate::montecarlo::{generate, DgpSpec};
//! use ivlate::complier::{centered_interacted_2sls, fit_propensity, PropensitySpec};
//!
//! let (data, _) = generate(&DgpSpec::dgp_a(), 5000, 7).unwrap();
//! let prop = fit_propensity(&data, &PropensitySpec::Saturated).unwrap();
//! let late = centered_interacted_2sls(&data, &prop).unwrap();
//! assert!((late.value - 1.0 / 9.0).abs() < 0.5);
//! ```

pub mod complier;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod montecarlo;
pub mod rng;
pub mod stratify;

pub use data::Dataset;
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/complier.md")]
    mod complier {}
    #[doc = include_str!("../../../book/src/stratification.md")]
    mod stratification {}
    #[doc = include_str!("../../../book/src/bootstrap.md")]
    mod bootstrap {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
