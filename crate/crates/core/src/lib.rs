//! Numerical toolkit for locating, classifying, and certifying bifurcation
//! points of finite-dimensional parameterized equations `F(lambda, u) = 0`.
//!
//! Everything numeric is generic over the scalar type via [`scalar::Scalar`];
//! concrete `f64` aliases live at the crate root.

pub mod classify;
pub mod discretize;
pub mod error;
pub mod extended;
pub mod linalg;
pub mod certify;
pub mod problem;
pub mod recovery;
pub mod report;
pub mod scalar;
pub mod testbeds;

pub use error::{BifError, Result};
pub use problem::{PointLU, ProblemDef};
pub use scalar::Scalar;

/// Concrete `f64` aliases for the main library types.
pub type Point = problem::PointLU<f64>;
pub type Problem = problem::ProblemDef<f64>;
pub type FramesF64 = extended::Frames<f64>;
pub type ExtStateF64 = extended::ExtState<f64>;
pub type ClassifyReportF64 = classify::ClassifyReport<f64>;
pub type RecoveryResultF64 = recovery::RecoveryResult<f64>;
pub type CertificateF64 = certify::Certificate<f64>;
pub type StudyRowF64 = discretize::StudyRow<f64>;
