//! romcex: parametric reduced-order models read as conditional expectations.
//!
//! The crate builds a pipeline around one idea: a parametric solution map
//! sampled at weighted parameter points defines a correlation operator whose
//! spectral decomposition yields the optimal linear representation of the
//! map, and filtering, kriging and reduced bases are all projections of the
//! same kind. The modules follow that progression:
//!
//! - [`linalg`]: dense symmetric eigensolves, SVD, projectors, Cholesky.
//! - [`darcy`]: a groundwater-flow full-order model producing snapshots.
//! - [`parametric_map`]: the scaled snapshot map, its correlations, and the
//!   Karhunen-Loeve expansion.
//! - [`rom`]: proper orthogonal decomposition, reduced basis models, and
//!   greedy CP tensor compression.
//! - [`bayes`]: conditional expectation estimators, Gauss-Markov-Kalman
//!   ensemble updates, and Gaussian process emulation.
//! - [`uq`]: model and numerical error as independent noise spaces with a
//!   product sampler and generalized loss.
//! - [`pipeline`]: configuration, artifacts on disk, and the CLI commands.

pub mod bayes;
pub mod darcy;
pub mod error;
pub mod linalg;
pub mod parametric_map;
pub mod pipeline;
pub mod rng;
pub mod rom;
pub mod uq;

pub use error::{Error, Result};
