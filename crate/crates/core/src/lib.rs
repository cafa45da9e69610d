//! Retrieval-based classification.
//!
//! The crate is organised around the life cycle of a retrieval-based
//! classifier:
//!
//! - [`dataset`], [`scorer`], [`loss`] and [`erm`] hold the shared
//!   multiclass vocabulary (margins, surrogate losses, plain empirical risk
//!   minimisation used as the global baseline).
//! - [`retrieval`] answers exact ball and k-nearest-neighbour queries with a
//!   brute-force scan or a vantage-point tree.
//! - [`local_erm`] fits a small model on the neighbours of every query and
//!   predicts with it.
//! - [`representation`] learns a global feature map and runs local ERM in
//!   the mapped space.
//! - [`extended_kernel`] learns a single kernel classifier over pairs of an
//!   instance and the empirical distribution of its neighbours.
//! - [`bounds`] evaluates the generalisation-bound terms numerically.
//! - [`synthetic`] generates the Gaussian-mixture benchmark with per-cluster
//!   linear boundaries.
//! - [`harness`] runs cross-validated sweeps and writes CSV/SVG reports.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators
//! otherwise. Results are identical either way.

pub mod bounds;
pub mod dataset;
pub mod erm;
pub mod error;
pub mod extended_kernel;
pub mod harness;
pub mod local_erm;
pub mod loss;
pub mod par;
pub mod representation;
pub mod retrieval;
pub mod rng;
pub mod scorer;
pub mod synthetic;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use loss::LossSpec;
pub use scorer::{Activation, Scorer, ScorerFamily};
