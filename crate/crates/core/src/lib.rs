//! Atlas-based anatomical labeling of vascular centerline trees.
//!
//! The crate is `no_std` (with `alloc`) and holds the numerical pipeline:
//!
//! * [`tree`]: labeled binary trees of polyline branches.
//! * [`kernel`]: multi-scale Gaussian kernel used as the deformation metric.
//! * [`shooting`]: Hamiltonian geodesic shooting of control points and its
//!   discrete adjoint.
//! * [`attachment`]: curve-varifold data term between two trees.
//! * [`lbfgs`]: limited-memory BFGS with a strong Wolfe line search.
//! * [`registration`]: minimization of deformation energy plus attachment over
//!   initial momenta, coarse to fine.
//! * [`atlas`]: iterated atlas construction by averaging initial momenta.
//! * [`labeling`]: closest-point voting, branch matching through the Hungarian
//!   algorithm, direct and bottom-up label assignment.
//! * [`pipeline`]: the labeling methods composed end to end.
//!
//! IO, dataset generation and the command line live in the `vesselatlas`
//! crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod atlas;
pub mod attachment;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod kernel;
pub mod labeling;
pub mod lbfgs;
pub mod pipeline;
pub mod registration;
pub mod shooting;
pub mod tree;

pub use error::{Error, TreeError};
pub use geometry::{Point3, Vec3};
pub use kernel::KernelSpec;
pub use tree::{Branch, LabelId, VascularTree};
