//! Certification toolkit for global attractivity of the interior equilibrium
//! of Lotka-Volterra systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the raw system `y' = diag(y)(r + B y)`, its interior
//!   equilibrium and the normalized form `x' = diag(x) A (x - 1)`.
//! * [`matrixops`] does the small dense symmetric analysis (definiteness,
//!   restricted definiteness, left eigenpairs, two-matrix combinations).
//! * [`certificates`] checks the Volterra-Lyapunov condition, the eigenvector
//!   conditions and the generalized (k, b, p, q, ...) certificate.
//! * [`search`] hunts for certificate witnesses with multi-start simplex
//!   descent and never self-certifies.
//! * [`lyapunov`] evaluates the Lyapunov-type functions behind a certificate.
//! * [`sim`] integrates the dynamics and produces empirical diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod fixtures;
pub mod lyapunov;
pub mod matrixops;
pub mod model;
pub mod search;
pub mod sim;

mod serde_vec;

pub use nalgebra::{DMatrix, DVector};

/// Dense real matrix used throughout the crate.
pub type Matrix = DMatrix<f64>;
/// Dense real column vector used throughout the crate.
pub type Vector = DVector<f64>;

pub use certificates::{
    Certificate, CertificateFamily, InvariantSetArgument, InvariantSetMode,
    StructuredFamilyParams, Theorem1Params, Witness,
};
pub use matrixops::{DefinitenessClass, DefinitenessVerdict, LeftEigenpair};
pub use model::{InteriorEquilibrium, LvSystem, NormalizedSystem};
pub use search::{SearchBudget, SearchOutcome, SearchStatus};
pub use sim::{IntegrateOptions, PersistenceReport, Trajectory};
