//! Forecasting realized covariance matrices on the manifold of symmetric
//! positive definite matrices.
//!
//! The crate is organised bottom-up:
//!
//! - [`spd`]: the SPD matrix type, matrix functions, distances, projection.
//! - [`frechet`]: sample Fréchet means under log-Euclidean and Procrustes metrics.
//! - [`respdnet`]: BiMap / ReEig / expansion layers and the forward pass.
//! - [`optim`]: Stiefel geometry, backpropagation, Riemannian SGD.
//! - [`dataset`]: realized covariance construction, supervised inputs, I/O, simulation.
//! - [`baselines`]: random walk and the Cholesky factor-VAR(1).
//! - [`rolling`]: one-step-ahead rolling-window forecasting for every model family.
//! - [`eval`]: loss panels, Model Confidence Set, regime splits.
//! - [`portfolio`]: minimum-variance portfolios and their performance metrics.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod frechet;
pub mod optim;
pub mod portfolio;
pub mod respdnet;
pub mod rolling;
pub mod spd;

pub use error::{Error, Result};
pub use spd::{EigPair, SpdMatrix};
