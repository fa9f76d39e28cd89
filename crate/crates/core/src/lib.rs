//! Goal-oriented optimal sensor placement and dynamic sensor steering for
//! Bayesian source inversion in two-dimensional advection-diffusion
//! transport.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`]: sparse operators, conjugate gradients, banded LU and
//!   randomized low-rank factorizations.
//! * [`domain`]: masked cell grid, potential-flow wind, initial-condition
//!   blobs and regions of interest.
//! * [`transport`]: implicit-Euler upwind finite-volume transport, the
//!   parameter-to-observable map and its exact discrete adjoint.
//! * [`prior`]: the bi-Laplacian-type Gaussian prior.
//! * [`inversion`]: design-weighted Hessian, MAP estimation, low-rank
//!   posterior and pointwise variance.
//! * [`rom`]: truncated-SVD surrogates of the forward map.
//! * [`oed`]: C-optimal designs with an l1 penalty and projected L-BFGS.
//! * [`steering`]: the closed measure-invert-redesign-move loop.
//! * [`scenario`] and [`io`]: configuration files and artifact formats.

pub mod domain;
pub mod error;
pub mod inversion;
pub mod io;
pub mod numcore;
pub mod oed;
pub mod prior;
pub mod rom;
pub mod scenario;
pub mod steering;
pub mod transport;

pub use error::{Error, Result};
