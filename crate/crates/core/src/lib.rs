//! Separable spatio-temporal kriging for sensor networks.
//!
//! The model treats readings on a regular time grid as a Gaussian field
//! `Y ~ mu + sigma * GP(0, R)` whose correlation factors as `R = R_S (x) R_T`
//! (Kronecker product of a spatial and a temporal correlation matrix).
//! Separability is what makes dense kriging on `S * T` points tractable:
//! prediction reduces to a temporal step per sensor followed by a spatial
//! interpolation step, and the prediction variance factors the same way.
//!
//! The crate covers the full pipeline: ingesting raw readings onto the grid
//! ([`grid`]), moving-average detrending ([`trend`]), correlation families
//! ([`acf`]), composite-likelihood spatial fitting ([`spatial_fit`]),
//! multiplicative seasonal AR temporal fitting ([`temporal_fit`]), two-step
//! prediction with factored variances ([`kriging`]), parametric-bootstrap
//! standard errors ([`bootstrap`]), forward sensor selection ([`selection`]),
//! and a message-passing runtime split that reproduces the monolithic
//! forecast-first predictions bit for bit ([`runtime`]). The [`cli`] module
//! wires these into the `sepkrig` binary.

pub mod acf;
pub mod bessel;
pub mod bootstrap;
pub mod cli;
pub mod error;
pub mod grid;
pub mod kriging;
pub mod kron;
pub mod optim;
pub mod runtime;
pub mod selection;
pub mod spatial_fit;
pub mod temporal_fit;
pub mod trend;

pub use error::{Error, Result};
