//! Dense kernels for the small time matrices: LU, real and complex Schur
//! forms, generalized eigenpairs and condition numbers.

mod eig;
mod lu;
mod matrix;
mod schur;
mod svd;

pub use eig::{generalized_eig, standard_form, AlphaForms, EigenPair, GeneralizedEigen};
pub use lu::Lu;
pub use matrix::{cnorm2, dot, norm2, CMatrix, DenseMatrix, Matrix, Scalar};
pub use schur::{complex_from_real, complex_schur, normalize_2x2, real_schur, ComplexSchur, RealSchur, SchurBlock};
pub use svd::{
    cholesky, cond_2norm, cond_2norm_complex, singular_values, sym_eigenvalues, sym_generalized_eigenvalues,
};
