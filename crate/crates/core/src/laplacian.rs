//! The discretized spherical Laplace operator and its eigenbasis.
//!
//! The operator is represented by a symmetric matrix `A` over the grid
//! cells. Off-diagonal entries use the Green's-function kernel of the
//! Laplacian on the sphere,
//!
//! ```text
//! A_ij = -(4/pi) * log(2 sin^2(d_gc(i,j)/2)) * dlat * dlon
//!        * sqrt(cos(lat_i) cos(lat_j))
//! ```
//!
//! and the diagonal uses the cell-radius regularization
//! `A_ii = (1/4) rho_i^2 (1 - 2 log(rho_i / sqrt(2)))`.
//!
//! `A` is projected onto the orthogonal complement of the constant vector
//! so that the constant pattern is an exact eigenfunction; the remaining
//! eigenvectors, ordered by descending eigenvalue, run from global scales
//! (north-south and east-west dipoles) down to fine scales.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;

use crate::basis::{BasisKind, BasisSet};
use crate::error::{Error, Result};
use crate::grid::{great_circle_distance, Grid};

/// Off-diagonal kernel variant.
///
/// `HalfAngleSin2` is the Green's-function form `log(2 sin^2(d/2))` and is
/// the default. `DoubleSinOfSquare` evaluates `log(2 sin(d^2))` instead;
/// it is kept selectable for comparison but takes the log of a quantity
/// that is not positive for all distances, so assembly can fail on grids
/// where the argument crosses zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelVariant {
    #[default]
    HalfAngleSin2,
    DoubleSinOfSquare,
}

impl KernelVariant {
    /// Stable identifier used in cache keys and provenance headers.
    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::HalfAngleSin2 => "half-angle-sin2",
            KernelVariant::DoubleSinOfSquare => "double-sin-of-square",
        }
    }

    pub fn from_name(name: &str) -> Option<KernelVariant> {
        match name {
            "half-angle-sin2" => Some(KernelVariant::HalfAngleSin2),
            "double-sin-of-square" => Some(KernelVariant::DoubleSinOfSquare),
            _ => None,
        }
    }
}

/// Assembles the symmetric discretized Laplacian matrix for `grid`.
pub fn assemble_laplacian_matrix(grid: &Grid, variant: KernelVariant) -> Result<DMatrix<f64>> {
    let n = grid.n_grid();
    let cells = grid.cells();
    let coslat: Vec<f64> = cells.iter().map(|&(lat, _)| libm::cos(lat)).collect();
    if let Some(i) = coslat.iter().position(|&c| c <= 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "cell {i} has cos(lat) <= 0; polar-center cells are not supported"
        )));
    }
    let scale = grid.d_lat() * grid.d_lon();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let rho = grid.cell_radius(i)?;
        a[(i, i)] = 0.25 * rho * rho * (1.0 - 2.0 * libm::log(rho / libm::sqrt(2.0)));
        for j in (i + 1)..n {
            let d = great_circle_distance(cells[i], cells[j]);
            let arg = match variant {
                KernelVariant::HalfAngleSin2 => {
                    let s = libm::sin(d / 2.0);
                    2.0 * s * s
                }
                KernelVariant::DoubleSinOfSquare => 2.0 * libm::sin(d * d),
            };
            if arg <= 0.0 {
                return Err(Error::Numerical(alloc::format!(
                    "kernel argument {arg} not positive at cells ({i},{j}), d={d}"
                )));
            }
            let v = -(4.0 / PI) * libm::log(arg) * scale * libm::sqrt(coslat[i] * coslat[j]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(a)
}

/// Projects `A` onto the orthogonal complement of the constant vector:
/// `A* = Q A Q` with `Q = I - 1 1^T / n`, so that `A* 1 = 0`.
pub fn project_out_constant(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| a.row(i).sum() / nf).collect();
    let grand_mean = row_means.iter().sum::<f64>() / nf;
    let mut out = a.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = a[(i, j)] - row_means[i] - row_means[j] + grand_mean;
        }
    }
    out
}

/// Computes the ordered orthonormal Laplacian eigenbasis for `grid`.
///
/// The constant pattern (entries `1/sqrt(n_grid)`) comes first; the
/// remaining eigenvectors of the projected operator follow in descending
/// eigenvalue order. Each vector's sign is fixed so its first entry of
/// non-negligible magnitude is positive, making the result bit-reproducible.
pub fn compute_laplacian_basis(grid: &Grid, variant: KernelVariant) -> Result<BasisSet> {
    let a = assemble_laplacian_matrix(grid, variant)?;
    let a_star = project_out_constant(&a);
    eigenbasis_from_projected(grid, &a_star)
}

/// Eigendecomposition and ordering step, split out so a precomputed
/// projected operator can be reused.
pub fn eigenbasis_from_projected(grid: &Grid, a_star: &DMatrix<f64>) -> Result<BasisSet> {
    let n = grid.n_grid();
    if a_star.nrows() != n || a_star.ncols() != n {
        return Err(Error::GridMismatch { expected: n, found: a_star.nrows() });
    }
    let eig = a_star.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigensolver produced non-finite eigenvalues".into()));
    }

    // The constant direction is an exact null vector of A*; find the
    // eigenvector that spans it and pin it to exactly 1/sqrt(n).
    let inv_sqrt_n = 1.0 / libm::sqrt(n as f64);
    let mut const_idx = 0usize;
    let mut best = -1.0f64;
    for k in 0..n {
        let overlap: f64 = eig.eigenvectors.column(k).iter().sum::<f64>().abs() * inv_sqrt_n;
        if overlap > best {
            best = overlap;
            const_idx = k;
        }
    }

    let mut order: Vec<usize> = (0..n).filter(|&k| k != const_idx).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(core::cmp::Ordering::Equal)
    });

    let mut vectors = DMatrix::<f64>::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    vectors.column_mut(0).fill(inv_sqrt_n);
    values.push(eig.eigenvalues[const_idx]);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        col /= col.norm();
        fix_sign(col.as_mut_slice());
        vectors.set_column(dst + 1, &col);
        values.push(eig.eigenvalues[src]);
    }
    BasisSet::new(grid.clone(), BasisKind::Laplacian, vectors, values)
}

/// Flips the vector so its first entry of non-negligible magnitude is
/// positive. Eigenvectors are sign-ambiguous; this pins a canonical choice.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let tol = 1e-12 * max;
    if let Some(&lead) = v.iter().find(|x| x.abs() > tol) {
        if lead < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn assembled_matrix_is_symmetric() {
        let grid = Grid::build(4, 8).unwrap();
        let a = assemble_laplacian_matrix(&grid, KernelVariant::default()).unwrap();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                assert_eq!(a[(i, j)], a[(j, i)]);
            }
        }
    }

    #[test]
    fn diagonal_hand_value_at_equator() {
        // rho ~ 0.049211 at the near-equator cell of the (36,72) grid gives
        // A_ii = (1/4) rho^2 (1 - 2 log(rho/sqrt(2))) ~ 0.0046718.
        let grid = Grid::build(36, 72).unwrap();
        let a = assemble_laplacian_matrix(&grid, KernelVariant::default()).unwrap();
        let i = grid.index_of(18, 0);
        let rho = grid.cell_radius(i).unwrap();
        let expect = 0.25 * rho * rho * (1.0 - 2.0 * libm::log(rho / libm::sqrt(2.0)));
        assert_eq!(a[(i, i)], expect);
        assert!((rho - 0.0492114).abs() < 1e-6);
        assert!((expect - 0.0046718).abs() < 5e-6);
    }

    #[test]
    fn mirrored_latitudes_give_equal_entries() {
        let grid = Grid::build(6, 12).unwrap();
        let a = assemble_laplacian_matrix(&grid, KernelVariant::default()).unwrap();
        // cells at latitude rows 1 and 4 mirror each other; same lon offset
        let i1 = grid.index_of(1, 0);
        let j1 = grid.index_of(1, 3);
        let i2 = grid.index_of(4, 0);
        let j2 = grid.index_of(4, 3);
        assert!((a[(i1, j1)] - a[(i2, j2)]).abs() < 1e-14);
    }

    #[test]
    fn projection_of_identity_is_centering_matrix() {
        let n = 5;
        let eye = DMatrix::<f64>::identity(n, n);
        let q = project_out_constant(&eye);
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 };
                assert!((q[(i, j)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn projection_annihilates_constant_vector() {
        let grid = Grid::build(4, 8).unwrap();
        let a = assemble_laplacian_matrix(&grid, KernelVariant::default()).unwrap();
        let a_star = project_out_constant(&a);
        let ones = DVector::<f64>::from_element(a_star.nrows(), 1.0);
        let r = &a_star * &ones;
        assert!(r.amax() < 1e-10);
    }

    #[test]
    fn projection_matches_dense_qaq_oracle() {
        // dense Q A Q on a 4-cell grid
        let grid = Grid::build(2, 2).unwrap();
        let a = assemble_laplacian_matrix(&grid, KernelVariant::default()).unwrap();
        let n = a.nrows();
        let q = DMatrix::<f64>::identity(n, n)
            - DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
        let oracle = &q * &a * &q;
        let fast = project_out_constant(&a);
        assert!((&oracle - &fast).amax() < 1e-12);
        assert!((oracle.trace() - fast.trace()).abs() < 1e-12);
    }

    #[test]
    fn basis_first_column_is_constant() {
        let grid = Grid::build(4, 8).unwrap();
        let basis = compute_laplacian_basis(&grid, KernelVariant::default()).unwrap();
        let expect = 1.0 / (grid.n_grid() as f64).sqrt();
        for &v in basis.vectors().column(0).iter() {
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn basis_is_orthonormal_gram_oracle() {
        let grid = Grid::build(6, 12).unwrap();
        let basis = compute_laplacian_basis(&grid, KernelVariant::default()).unwrap();
        let b = basis.vectors();
        let gram = b.tr_mul(b);
        let eye = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
        assert!((&gram - &eye).amax() < 1e-8);
    }

    #[test]
    fn basis_reconstructs_random_fields() {
        use rand::{Rng, SeedableRng};
        let grid = Grid::build(4, 8).unwrap();
        let basis = compute_laplacian_basis(&grid, KernelVariant::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let v = DVector::<f64>::from_fn(grid.n_grid(), |_, _| rng.gen_range(-1.0..1.0));
        let coeffs = basis.vectors().tr_mul(&v);
        let back = basis.vectors() * coeffs;
        assert!((&back - &v).amax() < 1e-8);
    }

    #[test]
    fn basis_is_deterministic() {
        let grid = Grid::build(4, 8).unwrap();
        let b1 = compute_laplacian_basis(&grid, KernelVariant::default()).unwrap();
        let b2 = compute_laplacian_basis(&grid, KernelVariant::default()).unwrap();
        assert_eq!(b1.vectors(), b2.vectors());
    }
}
