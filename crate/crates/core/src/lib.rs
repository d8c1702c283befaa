//! Deep Koopman autoencoders.
//!
//! An encoder maps states of a nonlinear dynamical system into a space
//! where the dynamics are linear, a decoder maps back, and the linear
//! (Koopman) operator is learned jointly. Two models are provided:
//!
//! * [`StatePred`] fits the operator by SVD and eigendecomposition of the
//!   encoded snapshots, so states can be predicted at any real index
//!   (interpolation, forward and backward extrapolation).
//! * [`TrajPred`] learns the operator as a bias-free linear layer and rolls
//!   out whole trajectories from new initial states.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod datagen;
mod error;
pub mod hypsearch;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod statepred;
pub mod tensor;
pub mod trajpred;

pub use checkpoint::Model;
pub use error::{Error, Result};
pub use metrics::{EpochMetrics, LossWeights, ModelKind, RunStats, SplitMetrics};
pub use statepred::{EigvecMode, KoopmanEigen, StatePred, StatePredConfig};
pub use tensor::{CMatrix, Matrix, RMatrix, C64};
pub use trajpred::{TrajPred, TrajPredConfig};
