//! Physics-augmented neural surrogate for the effective lattice stiffness.
//!
//! The network predicts the two independent Cholesky entries of an isotropic
//! stiffness; the output head makes every prediction positive definite.

pub mod cholesky;
pub mod dataset;
pub mod net;
pub mod train;

pub use cholesky::{cholesky_matrix, dependent_entries, stiffness_entries, stiffness_matrix, CholeskyPair, RATIO};
pub use dataset::{generate_dataset, ParamGrid, TrainingRecord, TrainingSet};
pub use net::{MaterialNet, Normalization, TrainingMeta, NET_FORMAT_VERSION};
pub use train::{loss_and_grad, mse, train, LossPoint, TrainConfig, TrainReport};
