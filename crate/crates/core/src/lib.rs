//! Aubin property and exact Lipschitz modulus of the argmin mapping
//! `(c, b) -> argmin { 1/2 x'Qx + c'x : A x <= b }` for convex QPs with fixed
//! `Q` and `A`.
//!
//! The pipeline is: Slater check ([`lp`]), nominal solve ([`qp`]), KKT index
//! families ([`families`]), bordered-matrix norms ([`modulus`]), and an
//! independent perturbation oracle ([`verify`]).

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod families;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod modulus;
pub mod par;
pub mod qp;
pub mod tolerance;
pub mod verify;

pub use error::{Error, Result};
pub use families::{kkt_families, IndexFamilies};
pub use linalg::{Matrix, VectorNorm};
pub use model::{IndexSet, InstanceFile, ParamPoint, PolyhedronFile, QpInstance};
pub use modulus::{lip_modulus, lip_projection, Modulus, ModulusReport, OperatorNormResult};
pub use par::Exec;
pub use tolerance::Tolerances;
pub use verify::{estimate_modulus, PerturbationTrace, VerifyOptions};
