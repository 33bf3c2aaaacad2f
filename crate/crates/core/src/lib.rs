//! Numerical laboratory for mixed-growth Korn and geometric rigidity
//! inequalities on regular grids.
//!
//! The crate computes the decompositions `Du = S + Σ F_α` (linear, skew `S`)
//! and `Du = Q + Σ F_α` (nonlinear, rotation `Q`) by following their
//! constructive proofs step by step, and measures the constants
//! `‖F_α‖_{p_α} / ‖f_α‖_{p_α}` empirically.

pub mod decomposition;
pub mod error;
pub mod extension;
pub mod fields;
pub mod gfld;
pub mod korn;
pub mod lab;
pub mod lorentz;
pub mod mat;
pub mod newtonian;
pub mod rigidity;
pub mod rotations;
pub mod truncation;

pub use error::{LabError, Result};
pub use fields::{
    gradient, lp_norm, make_domain, split_by_majorants, sym_grad, DomainKind, ExponentList, GridDomain, MatrixField,
    ScalarField, VectorField,
};
pub use mat::{Mat, Vector};
