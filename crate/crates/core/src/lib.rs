//! Adaptive discontinuous Galerkin and C0 interior penalty methods for fully
//! nonlinear Hamilton-Jacobi-Bellman and Isaacs equations
//!
//! ```text
//! inf_alpha sup_beta [ a^{alpha beta} : D^2 u - f^{alpha beta} ] = 0 in Omega,  u = 0 on the boundary,
//! ```
//!
//! with coefficients satisfying the Cordes condition, on convex polygons.
//!
//! The crate is organised bottom-up: [`mesh`] (newest-vertex bisection),
//! [`fespace`] (DG and C0 spaces, quadrature), [`cordes`] (control problems
//! and the renormalised operator), [`forms`] (liftings, stabilisation,
//! penalties, residual and Jacobian), [`solver`] (semismooth Newton),
//! [`adapt`] (estimators, marking, the adaptive loop) and [`study`]
//! (problem registry, configuration and convergence studies).

pub mod adapt;
pub mod cordes;
pub mod error;
pub mod fespace;
pub mod forms;
pub mod mesh;
pub mod solver;
pub mod study;

pub use error::{Error, Result};
