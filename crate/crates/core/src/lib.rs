//! Numerical laboratory for mixed Robin-Dirichlet boundary value problems,
//! Steklov spectra, P-function integral identities and free-boundary
//! hypersurface machinery in space forms, evaluated on conformal models
//! at desk scale.

pub mod fem;
pub mod geometry;
pub mod hypersurface;
pub mod identities;
pub mod linalg;
pub mod mesh;
pub mod recovery;
pub mod scenarios;
pub mod spectra;

pub use geometry::{GeomError, KillingData, Model, ScalarField, SpaceForm, SupportKind, SupportSurface};
