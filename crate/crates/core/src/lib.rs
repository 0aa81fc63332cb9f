//! Communication-efficient distributed eigenspace estimation.
//!
//! Workers compute the leading `r`-dimensional eigenspace of their own noisy
//! symmetric matrix; a coordinator combines the local bases after resolving
//! their orthogonal ambiguity with orthogonal Procrustes alignment.
//!
//! * [`linalg`]: QR, symmetric eigendecomposition, SVD-based Procrustes.
//! * [`models`]: synthetic spectra, samplers, quadratic sensing instances.
//! * [`estimators`]: local solve and every aggregation rule.
//! * [`metrics`]: subspace distances, intrinsic dimension, rate formulas.
//! * [`federation`]: coordinator/worker protocol, wire codec, transports.

pub mod error;
pub mod estimators;
pub mod federation;
pub mod linalg;
pub mod metrics;
pub mod models;

pub use error::{Error, Result};
pub use estimators::{AggregateSolution, LocalSolution, Method};
pub use linalg::{Matrix, OrthogonalTransform, SubspaceEstimate};
pub use models::{NodeDataset, SensingInstance, SpectralModel};
