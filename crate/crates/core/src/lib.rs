//! Rigid-motion synchronization over SE(d) with the anchored spectral
//! estimator.
//!
//! Given noisy pairwise comparisons `C_ij ~ G_i^{-1} G_j` of `n` rigid motions,
//! the estimators here recover every `G_i` up to a common gauge:
//!
//! * [`estimators::ase`] builds the translation-eliminated data matrix
//!   ([`data_matrix::build_omega`]), takes its `d` smallest eigenvectors
//!   ([`spectral::smallest_eigvecs`]) and rounds block `i` as
//!   `Pi_SO(d)(Phi_i Phi_1^T)`.
//! * [`estimators::two_stage`] and [`estimators::naive_projection`] are the
//!   baselines.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below cover the common double-precision case.

pub mod data_matrix;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod experiment;
pub mod geometry;
pub mod registration;
pub mod scalar;
pub mod spectral;
pub mod synthesis;

pub use error::{Error, Result};
pub use estimators::{EstimateSet, EstimatorOptions, Method};
pub use evaluation::ErrorReport;
pub use geometry::{RigidMotion, Rotation};
pub use scalar::Scalar;
pub use synthesis::{GroundTruth, MirrorMode, ObservationSet};

pub type Rotation64 = geometry::Rotation<f64>;
pub type RigidMotion64 = geometry::RigidMotion<f64>;
pub type GroundTruth64 = synthesis::GroundTruth<f64>;
pub type ObservationSet64 = synthesis::ObservationSet<f64>;
pub type DataMatrix64 = data_matrix::DataMatrix<f64>;
pub type SpectralBasis64 = spectral::SpectralBasis<f64>;
pub type EstimateSet64 = estimators::EstimateSet<f64>;
pub type ErrorReport64 = evaluation::ErrorReport<f64>;

pub type Rotation32 = geometry::Rotation<f32>;
pub type RigidMotion32 = geometry::RigidMotion<f32>;
pub type ObservationSet32 = synthesis::ObservationSet<f32>;
pub type EstimateSet32 = estimators::EstimateSet<f32>;
