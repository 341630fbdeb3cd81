//! Orthonormal basis sets over a grid and field projection.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::covariance::FieldVector;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Which construction produced the basis vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// Eigenvectors of the discretized spherical Laplace operator;
    /// data-independent, ordered from global to fine spatial scales.
    Laplacian,
    /// Principal components of a control-ensemble empirical covariance.
    PrincipalComponent,
}

/// An ordered orthonormal set of basis vectors bound to a grid.
///
/// Columns of `vectors` are unit length and mutually orthogonal within
/// 1e-8. For the Laplacian kind the first column is the constant pattern
/// and `n_basis == n_grid`; for principal components `n_basis` is the
/// numerical rank of the source covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    grid: Grid,
    kind: BasisKind,
    vectors: DMatrix<f64>,
    /// Eigenvalues of the generating operator, one per column: the
    /// projected-Laplacian eigenvalues for `Laplacian`, the covariance
    /// eigenvalues for `PrincipalComponent`.
    operator_eigenvalues: Vec<f64>,
}

impl BasisSet {
    pub fn new(
        grid: Grid,
        kind: BasisKind,
        vectors: DMatrix<f64>,
        operator_eigenvalues: Vec<f64>,
    ) -> Result<BasisSet> {
        if vectors.nrows() != grid.n_grid() {
            return Err(Error::GridMismatch { expected: grid.n_grid(), found: vectors.nrows() });
        }
        if operator_eigenvalues.len() != vectors.ncols() {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} eigenvalues for {} basis columns",
                operator_eigenvalues.len(),
                vectors.ncols()
            )));
        }
        Ok(BasisSet { grid, kind, vectors, operator_eigenvalues })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// The `n_grid x n_basis` column matrix of basis vectors.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn n_basis(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn operator_eigenvalues(&self) -> &[f64] {
        &self.operator_eigenvalues
    }

    /// Projects a field onto the full basis: `B^T f`.
    pub fn project_full(&self, f: &FieldVector) -> Result<DVector<f64>> {
        if f.grid().n_grid() != self.grid.n_grid() {
            return Err(Error::GridMismatch {
                expected: self.grid.n_grid(),
                found: f.grid().n_grid(),
            });
        }
        Ok(self.vectors.tr_mul(f.as_vector()))
    }

    /// First `kappa` coefficients of `B^T f`.
    pub fn project_field(&self, f: &FieldVector, kappa: usize) -> Result<Vec<f64>> {
        if kappa < 1 || kappa > self.n_basis() {
            return Err(Error::IndexOutOfRange { index: kappa, len: self.n_basis() });
        }
        let full = self.project_full(f)?;
        Ok(full.as_slice()[..kappa].to_vec())
    }
}
