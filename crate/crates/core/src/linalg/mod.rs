//! Symmetric indefinite factorizations for the interior-point KKT systems.
//!
//! Two backends behind one interface: a dense Bunch-Kaufman LDL^T for small
//! systems and a no-pivot sparse LDL^T (elimination-tree based, reverse
//! Cuthill-McKee ordered) for large ones. The sparse path relies on the
//! caller keeping the system quasi-definite through primal-dual
//! regularization; a breakdown is reported so the caller can regularize and
//! retry.

mod dense;
mod sparse;

pub use dense::DenseLdlt;
pub use sparse::{rcm_order, SparseLdlt, SparseSym};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("zero or tiny pivot at position {0}")]
    TinyPivot(usize),
    #[error("matrix dimension mismatch")]
    Dimension,
}

/// Eigenvalue sign counts of a factored symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub pos: usize,
    pub neg: usize,
    pub zero: usize,
}

impl Inertia {
    /// The inertia an interior-point KKT system must have: one positive
    /// eigenvalue per primal variable, one negative per constraint row.
    pub fn is_kkt_correct(&self, n_primal: usize, n_dual: usize) -> bool {
        self.pos == n_primal && self.neg == n_dual && self.zero == 0
    }
}

/// Symmetric indefinite factorization of a KKT matrix, dense or sparse
/// depending on dimension.
pub enum KktFactor {
    Dense(DenseLdlt),
    Sparse(SparseLdlt),
}

impl KktFactor {
    pub fn inertia(&self) -> Inertia {
        match self {
            KktFactor::Dense(f) => f.inertia(),
            KktFactor::Sparse(f) => f.inertia(),
        }
    }

    pub fn solve(&self, b: &mut [f64]) {
        match self {
            KktFactor::Dense(f) => f.solve(b),
            KktFactor::Sparse(f) => f.solve(b),
        }
    }
}
