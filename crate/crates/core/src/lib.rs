//! Simulation and maximum-likelihood drift estimation for small-noise SDEs
//! driven by fractional Brownian motion with Hurst index in `(1/3, 1/2)`.

pub mod error;
pub mod fbm;
pub mod fraccalc;
pub mod inference;
pub mod io;
pub mod mcstudy;
pub mod model;
pub mod rde;
pub mod rng;
pub mod roughpath;
pub mod selftest;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/driver.md")]
    mod driver {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/fractional.md")]
    mod fractional {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/limits.md")]
    mod limits {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
