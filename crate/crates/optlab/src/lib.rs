//! A numerical-optimization laboratory for learned algorithm selection.
//!
//! The crate has two experiment families built on shared primitives:
//!
//! - **Compressed sensing**: seeded measurement ensembles ([`ensembles`]),
//!   greedy sparse solvers with a five-way stopping engine ([`greedy`],
//!   [`sparse_ops`]), and a pipeline that maps out empirical success regions
//!   on the (delta, rho) sampling plane and trains a classifier to predict
//!   them ([`phase_lab`]).
//! - **SGD schedule selection**: least-squares systems (synthetic Gaussian
//!   and computerized-tomography via [`tomo`]), SGD under constant or
//!   epoch-decay learning rates, and a classifier that picks the better
//!   schedule from the measurement vector alone ([`sgd_lab`]).
//!
//! Both classifiers are the from-scratch dense network in [`mlp`]. Every
//! generator and training loop is a pure function of its seed, so datasets
//! and reports are byte-reproducible.

pub mod blas;
pub mod ensembles;
pub mod error;
pub mod greedy;
pub mod matio;
pub mod mlp;
pub mod phase_lab;
pub mod rng;
pub mod sgd_lab;
pub mod sparse_ops;
pub mod tomo;

pub use ensembles::{MatrixKind, MeasurementMatrix, PlanePoint, SparseSignal};
pub use error::{Error, Result};
pub use greedy::{Algo, ExitStatus, SolveResult, StoppingConfig};
pub use mlp::{MlpModel, TrainConfig};
pub use sparse_ops::IndexSet;
