use thiserror::Error;

/// Errors raised by discretization, factorization and solver routines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("point {x} lies outside the basis domain [{a}, {b}]")]
    Domain { x: f64, a: f64, b: f64 },

    #[error("knot vectors are not nested: {0}")]
    Nesting(String),

    #[error("degenerate geometry map (|det| = {0:e})")]
    Geometry(f64),

    #[error("time slabs do not share the interface: previous ends at {prev_end}, next starts at {next_start}")]
    Interface { prev_end: f64, next_start: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("matrix is numerically singular (pivot {pivot:e} at index {index})")]
    Singular { index: usize, pivot: f64 },

    #[error("matrix is not positive definite (pivot or curvature {value:e} at index {index})")]
    Definiteness { index: usize, value: f64 },

    #[error("{method} did not converge after {iterations} iterations (relative residual {residual:e})")]
    Convergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{method} broke down at iteration {iteration}")]
    Breakdown { method: &'static str, iteration: usize },

    #[error("block has real eigenvalues and cannot be normalized: {0}")]
    Precondition(String),

    #[error("inadmissible time discretization: {0}")]
    Admissibility(String),

    #[error("eigenvector matrix too ill-conditioned for diagonalization: cond(X) = {cond:e} exceeds cap {cap:e}; use the complex or real Schur strategy")]
    Conditioning { cond: f64, cap: f64 },

    #[error("degenerate 2x2 block at index {0}")]
    DegenerateBlock(usize),

    #[error("result has a non-negligible imaginary part (relative {0:e})")]
    ComplexResidue(f64),

    #[error("slab {slab}: {source}")]
    Slab {
        slab: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("eigenvalue {index}: {source}")]
    Eigen {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("coarsening schedule: {0}")]
    Schedule(String),

    #[error("GMRES stagnated after {iterations} iterations (relative residual {residual:e})")]
    Stagnation { iterations: usize, residual: f64 },

    #[error("configuration: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn in_slab(self, slab: usize) -> Error {
        Error::Slab {
            slab,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_eigenvalue(self, index: usize) -> Error {
        Error::Eigen {
            index,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
