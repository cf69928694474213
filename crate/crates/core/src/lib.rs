//! Steady bifurcation analysis for a rigid sphere falling under gravity in a
//! viscous liquid.
//!
//! The sphere (unit radius) falls along `e₁` with speed `ξ`. In the frame
//! attached to the body the velocity `v` solves the steady Navier–Stokes
//! equations in `|x| > 1` with a rigid trace `ξ e₁ + ω × x`, and the force
//! and torque balances close the system. The dimensionless weight `λ` is the
//! bifurcation parameter.
//!
//! Module map:
//! * [`basis`]: solenoidal modal bases, lifting fields, rigid extensions;
//! * [`forms`]: Galerkin matrices and force/torque recovery;
//! * [`baseflow`]: the steady axisymmetric branch;
//! * [`spectrum`]: linearized operator bundle and its leading eigenvalues;
//! * [`bifurcation`]: scans, critical parameter, certification, symmetry breaking;
//! * [`run`]: configuration, result store and command drivers.

pub mod baseflow;
pub mod bifurcation;
pub mod basis;
pub mod error;
pub mod forms;
pub mod jet;
pub mod quadrature;
pub mod run;
pub mod spectrum;

pub use basis::{
    build_basis, evaluate_field, rigid_extension, CutoffSpec, DiscreteField, FieldSample,
    ModalBasis, Parity, RigidMotion, Rotlet, StokesTranslation, VectorField,
};
pub use error::{Error, Result};
pub use quadrature::{QuadratureSpec, RadialGrid, RadialMap, VolumeGrid};
