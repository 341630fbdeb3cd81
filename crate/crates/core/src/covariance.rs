//! Control ensembles, empirical covariance, principal components, and
//! per-basis empirical variance spectra.
//!
//! The empirical covariance of a control ensemble uses the
//! maximum-likelihood divisor `n_P` (not `n_P - 1`):
//!
//! ```text
//! C_hat = (1/n_P) sum_k (z_k - z_bar)(z_k - z_bar)^T
//! ```
//!
//! `C_hat` is rank-deficient whenever `n_P - 1 < n_grid`, which is the
//! regime this whole method targets; it is therefore never materialized at
//! full size in the standard path. Principal components come from the thin
//! SVD of the anomaly matrix, and basis variances from projected anomalies.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisKind, BasisSet};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::laplacian::fix_sign;

/// A real-valued field over the cells of a grid (trend units).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    grid: Grid,
    values: DVector<f64>,
}

impl FieldVector {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<FieldVector> {
        if values.len() != grid.n_grid() {
            return Err(Error::GridMismatch { expected: grid.n_grid(), found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field contains non-finite values".into()));
        }
        Ok(FieldVector { grid, values: DVector::from_vec(values) })
    }

    pub(crate) fn from_vector(grid: Grid, values: DVector<f64>) -> FieldVector {
        debug_assert_eq!(values.len(), grid.n_grid());
        FieldVector { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }
}

/// A set of control-run trend fields from one climate model.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEnsemble {
    model_id: String,
    fields: Vec<FieldVector>,
}

impl ControlEnsemble {
    /// Requires at least two members, all on the same grid.
    pub fn new(model_id: String, fields: Vec<FieldVector>) -> Result<ControlEnsemble> {
        if fields.len() < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "control ensemble needs n_P >= 2, got {}",
                fields.len()
            )));
        }
        let n = fields[0].grid().n_grid();
        for f in &fields[1..] {
            if f.grid().n_grid() != n || f.grid() != fields[0].grid() {
                return Err(Error::GridMismatch { expected: n, found: f.grid().n_grid() });
            }
        }
        Ok(ControlEnsemble { model_id, fields })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn fields(&self) -> &[FieldVector] {
        &self.fields
    }

    pub fn n_members(&self) -> usize {
        self.fields.len()
    }

    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    /// Mean-removed members as columns of an `n_grid x n_P` matrix.
    fn anomaly_matrix(&self) -> DMatrix<f64> {
        let n_grid = self.grid().n_grid();
        let n_p = self.fields.len();
        let mut mean = DVector::<f64>::zeros(n_grid);
        for f in &self.fields {
            mean += f.as_vector();
        }
        mean /= n_p as f64;
        let mut z = DMatrix::<f64>::zeros(n_grid, n_p);
        for (k, f) in self.fields.iter().enumerate() {
            z.set_column(k, &(f.as_vector() - &mean));
        }
        z
    }
}

/// Per-component empirical variances in some basis.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSpectrum {
    basis_kind: BasisKind,
    lambdas: Vec<f64>,
    source_n: usize,
}

impl VarianceSpectrum {
    pub fn new(basis_kind: BasisKind, lambdas: Vec<f64>, source_n: usize) -> Result<VarianceSpectrum> {
        if lambdas.iter().any(|&l| !l.is_finite() || l < 0.0) {
            return Err(Error::NonFinite("variance spectrum must be finite and >= 0".into()));
        }
        Ok(VarianceSpectrum { basis_kind, lambdas, source_n })
    }

    pub fn basis_kind(&self) -> BasisKind {
        self.basis_kind
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Number of control fields the spectrum was estimated from.
    pub fn source_n(&self) -> usize {
        self.source_n
    }
}

/// Dense empirical covariance `(1/n_P) sum_k (z_k - z_bar)(z_k - z_bar)^T`.
///
/// Only intended for small grids (oracles and tests); the standard path
/// works with the anomaly matrix instead.
pub fn empirical_covariance(ens: &ControlEnsemble) -> DMatrix<f64> {
    let z = ens.anomaly_matrix();
    let scaled = &z / (ens.n_members() as f64);
    &z * scaled.transpose()
}

/// Relative eigenvalue cutoff below which principal components are
/// considered numerically null.
pub const PC_RANK_CUTOFF: f64 = 1e-10;

/// Principal components of the ensemble's empirical covariance, restricted
/// to numerically nonzero eigenvalues, via the thin SVD of the anomaly
/// matrix (never a dense `n_grid^2` eigensolve).
pub fn principal_components(ens: &ControlEnsemble) -> Result<(BasisSet, VarianceSpectrum)> {
    let n_p = ens.n_members();
    let z = ens.anomaly_matrix() / libm::sqrt(n_p as f64);
    let svd = z.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return singular vectors".into()))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let top = svd.singular_values[order[0]] * svd.singular_values[order[0]];
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] * svd.singular_values[i] > PC_RANK_CUTOFF * top)
        .collect();
    if kept.is_empty() {
        return Err(Error::Numerical("empirical covariance has numerical rank zero".into()));
    }

    let n_grid = ens.grid().n_grid();
    let mut vectors = DMatrix::<f64>::zeros(n_grid, kept.len());
    let mut lambdas = Vec::with_capacity(kept.len());
    for (dst, &src) in kept.iter().enumerate() {
        let mut col = u.column(src).clone_owned();
        col /= col.norm();
        fix_sign(col.as_mut_slice());
        vectors.set_column(dst, &col);
        lambdas.push(svd.singular_values[src] * svd.singular_values[src]);
    }
    let basis = BasisSet::new(
        ens.grid().clone(),
        BasisKind::PrincipalComponent,
        vectors,
        lambdas.clone(),
    )?;
    let spectrum = VarianceSpectrum::new(BasisKind::PrincipalComponent, lambdas, n_p)?;
    Ok((basis, spectrum))
}

/// Empirical variance of each basis coefficient over the ensemble:
/// `lambda_hat_i = (1/n_P) sum_k (z*_{k,i} - z*_bar_i)^2 = diag(B^T C_hat B)_i`.
pub fn empirical_basis_variances(
    ens: &ControlEnsemble,
    basis: &BasisSet,
) -> Result<VarianceSpectrum> {
    if ens.grid().n_grid() != basis.grid().n_grid() {
        return Err(Error::GridMismatch {
            expected: basis.grid().n_grid(),
            found: ens.grid().n_grid(),
        });
    }
    let n_p = ens.n_members();
    let projected = basis.vectors().tr_mul(&ens.anomaly_matrix());
    let lambdas: Vec<f64> = (0..projected.nrows())
        .map(|i| projected.row(i).iter().map(|&v| v * v).sum::<f64>() / n_p as f64)
        .collect();
    VarianceSpectrum::new(basis.kind(), lambdas, n_p)
}

/// Scales each entry by `sqrt(cos(lat_i))`, normalized so the squared
/// weights average to one (a uniform unit field keeps total energy
/// `n_grid` after weighting).
pub fn area_weight_field(grid: &Grid, f: &FieldVector) -> Result<FieldVector> {
    if f.grid() != grid {
        return Err(Error::GridMismatch { expected: grid.n_grid(), found: f.grid().n_grid() });
    }
    let mean_cos = grid.cells().iter().map(|&(lat, _)| libm::cos(lat)).sum::<f64>()
        / grid.n_grid() as f64;
    let values: Vec<f64> = grid
        .cells()
        .iter()
        .zip(f.values())
        .map(|(&(lat, _), &v)| v * libm::sqrt(libm::cos(lat) / mean_cos))
        .collect();
    FieldVector::new(grid.clone(), values)
}
