//! Numerical laboratory for the Aviles–Giga functional
//!
//! ```text
//! F_eps(u) = ∫ eps |∇²u|^p + eps⁻¹ (1 − |∇u|²)²
//! ```
//!
//! on ellipses and stadiums extended by a collar where competitors are pinned to
//! minus the distance function. Besides the minimizer, the crate carries the
//! diagnostics used to study the sharp-interface limit: entropy productions of the
//! cubic frame entropies, explicit minimal kinetic densities along the ridge, and
//! a characteristic tracer for the limit field.
//!
//! Modules map onto the pipeline:
//!
//! * [`domain`]: exact geometry (signed distance, projection, ridge, grid masks).
//! * [`fields`]: grid fields and finite-difference calculus.
//! * [`functional`]: discrete energy, gradient and minimizers.
//! * [`entropy`]: frame entropies, generators, entropy productions, jump energy.
//! * [`kinetic`]: kinetic indicator, circle measures, minimal disintegrations.
//! * [`lagrangian`]: characteristics and ensemble statistics.

pub mod domain;
pub mod entropy;
pub mod error;
pub mod fields;
pub mod functional;
pub mod geom;
pub mod kinetic;
pub mod lagrangian;
pub mod optim;
pub mod quad;

pub use domain::{Domain, DomainKind, Grid, NodeClass, RidgePoint, RidgeSet};
pub use error::{Error, Result};
pub use fields::{CellMeasure, Region, ScalarField, VectorField};
pub use geom::Vec2;
