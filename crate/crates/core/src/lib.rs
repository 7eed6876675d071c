//! On-manifold state estimation.
//!
//! States are [`ManifoldPoint`]s (vectors, matrix Lie group elements, or
//! composites of both) manipulated only through `⊕`/`⊖`. Process and
//! measurement models plug into a family of stateless estimators: EKF,
//! iterated EKF, invariant EKF, sigma-point filters, the IMM, and a batch
//! MAP solver. Preintegration, interpolation and NEES tooling round it out.

pub mod batch;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod lie;
pub mod models;
pub mod numdiff;
pub mod preintegration;
pub mod scalar;
pub mod state;

pub use error::{Error, Result};
pub use lie::{GroupElement, GroupKind, Side, TangentVector};
pub use scalar::Scalar;
pub use state::{belief_check, GaussianBelief, ManifoldPoint, PerturbationSide};
