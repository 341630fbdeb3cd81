//! Seeded synthetic climate worlds: control and forced ensembles drawn
//! from a known spectrum in a known basis, so the scaling coefficient is
//! known to be exactly one.
//!
//! A world is defined by a variance spectrum `lambda_true` over basis
//! columns, a forced-response field, and ensemble sizes. Control members
//! are `z = B (eps .* sqrt(lambda_true))` with standard-normal `eps`;
//! forced members add the same-law noise to the forced field. Mismatched
//! worlds perturb the spectrum by per-component log-normal factors before
//! generating, standing in for the spread between distinct climate
//! models.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::{BasisKind, BasisSet};
use crate::bayes::draw_standard_normal;
use crate::covariance::{ControlEnsemble, FieldVector, VarianceSpectrum};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Recipe for one synthetic world.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorldSpec {
    pub grid: Grid,
    /// True variances per basis component; may be shorter than the basis,
    /// in which case the remaining components carry no noise.
    pub true_spectrum: VarianceSpectrum,
    pub true_forced_field: FieldVector,
    pub n_control: usize,
    pub n_forced: usize,
    pub seed: u64,
}

impl SyntheticWorldSpec {
    pub fn validate(&self, basis: &BasisSet) -> Result<()> {
        if basis.grid() != &self.grid || self.true_forced_field.grid() != &self.grid {
            return Err(Error::GridMismatch {
                expected: self.grid.n_grid(),
                found: basis.grid().n_grid(),
            });
        }
        if self.true_spectrum.len() > basis.n_basis() {
            return Err(Error::IndexOutOfRange {
                index: self.true_spectrum.len(),
                len: basis.n_basis(),
            });
        }
        if let Some(i) = self.true_spectrum.lambdas().iter().position(|&l| l < 0.0) {
            return Err(Error::NonPositiveVariance { component: i });
        }
        if self.n_control < 2 || self.n_forced < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "ensembles need at least 2 members, got n_control={}, n_forced={}",
                self.n_control,
                self.n_forced
            )));
        }
        Ok(())
    }
}

fn draw_noise_field(
    basis: &BasisSet,
    sqrt_lambda: &[f64],
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let mut field = DVector::zeros(basis.grid().n_grid());
    for (i, &s) in sqrt_lambda.iter().enumerate() {
        // a draw is consumed per component regardless of its weight, so
        // the stream layout does not depend on which lambdas are zero
        let eps = draw_standard_normal(rng);
        if s > 0.0 {
            field.axpy(s * eps, &basis.vectors().column(i).clone_owned(), 1.0);
        }
    }
    field
}

/// Generates one world: a control ensemble of pure noise and a forced
/// ensemble of the forced field plus same-law noise. Bit-reproducible
/// from the seed.
pub fn generate_synthetic_world(
    spec: &SyntheticWorldSpec,
    basis: &BasisSet,
    model_id: &str,
) -> Result<(ControlEnsemble, Vec<FieldVector>)> {
    spec.validate(basis)?;
    let sqrt_lambda: Vec<f64> =
        spec.true_spectrum.lambdas().iter().map(|&l| libm::sqrt(l)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut controls = Vec::with_capacity(spec.n_control);
    for _ in 0..spec.n_control {
        let z = draw_noise_field(basis, &sqrt_lambda, &mut rng);
        controls.push(FieldVector::from_vector(spec.grid.clone(), z));
    }
    let mut forced = Vec::with_capacity(spec.n_forced);
    for _ in 0..spec.n_forced {
        let z = draw_noise_field(basis, &sqrt_lambda, &mut rng);
        forced.push(FieldVector::from_vector(
            spec.grid.clone(),
            spec.true_forced_field.as_vector() + z,
        ));
    }
    Ok((ControlEnsemble::new(String::from(model_id), controls)?, forced))
}

/// Perturbs a spectrum by independent log-normal factors
/// `exp(sd * eps_i)`, the desk-scale stand-in for spectra differing
/// between climate models. `sd = 0` returns the spectrum unchanged.
pub fn mismatch_spectrum(
    spectrum: &VarianceSpectrum,
    log_sd: f64,
    seed: u64,
) -> Result<VarianceSpectrum> {
    if !(log_sd >= 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "mismatch log-sd must be nonnegative, got {log_sd}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambdas: Vec<f64> = spectrum
        .lambdas()
        .iter()
        .map(|&l| l * libm::exp(log_sd * draw_standard_normal(&mut rng)))
        .collect();
    VarianceSpectrum::new(spectrum.basis_kind(), lambdas, spectrum.source_n())
}

/// A smoothly decaying spectrum `lambda_i = scale / (1 + i)^rate`,
/// convenient for desk-scale worlds.
pub fn power_law_spectrum(n: usize, scale: f64, rate: f64) -> Result<VarianceSpectrum> {
    if !(scale > 0.0) || !(rate >= 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "need scale > 0 and rate >= 0, got scale={scale}, rate={rate}"
        )));
    }
    let lambdas: Vec<f64> =
        (0..n).map(|i| scale / libm::pow(1.0 + i as f64, rate)).collect();
    VarianceSpectrum::new(BasisKind::Laplacian, lambdas, n)
}

/// A forced-response field concentrated on the first few non-constant
/// basis columns, standing in for a large-scale warming pattern.
pub fn smooth_forced_field(basis: &BasisSet, amplitude: f64, n_modes: usize) -> Result<FieldVector> {
    let n = n_modes.min(basis.n_basis().saturating_sub(1));
    let mut field = DVector::zeros(basis.grid().n_grid());
    for i in 0..n {
        let w = amplitude / (1.0 + i as f64);
        field.axpy(w, &basis.vectors().column(i + 1).clone_owned(), 1.0);
    }
    Ok(FieldVector::from_vector(basis.grid().clone(), field))
}
