//! Kernelized bandits under unknown Matérn smoothness: kernels, posteriors,
//! base algorithms, model-selection masters, the lower-bound construction and
//! the regret bookkeeping used by the experiments.

pub mod adversary;
pub mod base_algorithms;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod model_selection;
pub mod regression;
pub mod seeding;
