//! Space-time isogeometric discretization of the heat equation on time slabs,
//! with Kronecker-structured slab inverses (diagonalization, complex and real
//! Schur), block preconditioned MinRes, and a time-parallel multigrid.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod assembly;
pub mod complex;
pub mod denselin;
pub mod error;
pub mod experiments;
pub mod multigrid;
pub mod slab_inverse;
pub mod spacetime;
pub mod sparse;
pub mod spatial_solvers;
pub mod splines;

pub use complex::C64;
pub use error::{Error, Result};
