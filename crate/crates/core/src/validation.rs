//! The known-truth validation study: sweep every
//! (control, historical ensemble, member) tuple, fit the scaling
//! coefficient with the member as pseudo-observations and the
//! leave-one-out ensemble mean as the fingerprint, and record
//! calibration metrics against the known truth `beta = 1`.

use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::basis::{BasisKind, BasisSet};
use crate::bayes::{two_fit, FitOptions, RegressionData};
use crate::covariance::{
    empirical_basis_variances, principal_components, ControlEnsemble, FieldVector,
    VarianceSpectrum, PC_RANK_CUTOFF,
};
use crate::error::{Error, Result};
use crate::metrics::{credible_interval, crps};

/// A control ensemble reduced to what a fit needs: the basis and the
/// empirical spectrum in it.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedControl {
    pub model_id: String,
    pub basis: BasisSet,
    pub spectrum: VarianceSpectrum,
}

/// Builds the per-control basis and spectrum. For the Laplacian basis the
/// (expensive, data-independent) basis is supplied by the caller and only
/// the spectrum is estimated; for principal components both come from the
/// ensemble itself.
///
/// The Laplacian spectrum is truncated at the first component falling
/// below `PC_RANK_CUTOFF` relative to the largest: variances that small
/// are numerical noise (e.g. directions the ensemble does not span) and
/// would poison the truncation search.
pub fn prepare_control(
    ens: &ControlEnsemble,
    basis_kind: BasisKind,
    laplacian: Option<&BasisSet>,
) -> Result<PreparedControl> {
    let (basis, spectrum) = match basis_kind {
        BasisKind::Laplacian => {
            let basis = laplacian.ok_or_else(|| {
                Error::InvalidArgument("Laplacian basis must be precomputed".into())
            })?;
            if basis.grid() != ens.grid() {
                return Err(Error::GridMismatch {
                    expected: basis.grid().n_grid(),
                    found: ens.grid().n_grid(),
                });
            }
            let raw = empirical_basis_variances(ens, basis)?;
            let max = raw.lambdas().iter().copied().fold(0.0f64, f64::max);
            let keep = raw
                .lambdas()
                .iter()
                .position(|&l| l <= PC_RANK_CUTOFF * max)
                .unwrap_or(raw.len());
            let spectrum = VarianceSpectrum::new(
                BasisKind::Laplacian,
                raw.lambdas()[..keep].to_vec(),
                raw.source_n(),
            )?;
            (basis.clone(), spectrum)
        }
        BasisKind::PrincipalComponent => principal_components(ens)?,
    };
    Ok(PreparedControl { model_id: String::from(ens.model_id()), basis, spectrum })
}

/// Study-wide settings. `fit.seed` acts as the base seed from which every
/// tuple derives its own.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub basis_kind: BasisKind,
    pub fit: FitOptions,
    pub credible_level: f64,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.credible_level && self.credible_level < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "credible level {} outside (0,1)",
                self.credible_level
            )));
        }
        Ok(())
    }
}

/// One completed fit of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub c: usize,
    pub f: usize,
    pub k: usize,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub contains_one: bool,
    pub crps: f64,
    pub kappa_post: usize,
    pub converged: bool,
    pub seed: u64,
}

/// A tuple whose fit errored; the sweep records it and moves on.
#[derive(Debug, Clone, PartialEq)]
pub struct FitFailure {
    pub c: usize,
    pub f: usize,
    pub k: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutput {
    pub records: Vec<FitRecord>,
    pub failures: Vec<FitFailure>,
}

/// Ensemble mean with member `k` left out.
pub fn leave_one_out_mean(fields: &[FieldVector], k: usize) -> Result<FieldVector> {
    let n = fields.len();
    if n < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "leave-one-out needs at least 2 members, got {n}"
        )));
    }
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k, len: n });
    }
    let mut sum = fields[0].as_vector().clone();
    sum.fill(0.0);
    for (i, f) in fields.iter().enumerate() {
        if f.grid() != fields[0].grid() {
            return Err(Error::GridMismatch {
                expected: fields[0].grid().n_grid(),
                found: f.grid().n_grid(),
            });
        }
        if i != k {
            sum += f.as_vector();
        }
    }
    sum /= (n - 1) as f64;
    Ok(FieldVector::from_vector(fields[0].grid().clone(), sum))
}

/// All (c, f, k) triples of a study, in canonical sweep order.
pub fn enumerate_tuples(n_controls: usize, ensemble_sizes: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for c in 0..n_controls {
        for (f, &n) in ensemble_sizes.iter().enumerate() {
            for k in 0..n {
                out.push((c, f, k));
            }
        }
    }
    out
}

/// Deterministic per-tuple seed: a cryptographic mix of the base seed and
/// the tuple coordinates, so parallel execution order cannot affect any
/// fit.
pub fn tuple_seed(base_seed: u64, c: usize, f: usize, k: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update((c as u64).to_le_bytes());
    h.update((f as u64).to_le_bytes());
    h.update((k as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Fits one tuple: pseudo-observations `y = x_k`, fingerprint
/// `x = mean of the others`, covariance from the prepared control.
pub fn fit_tuple(
    control: &PreparedControl,
    historical: &[FieldVector],
    c: usize,
    f: usize,
    k: usize,
    config: &StudyConfig,
) -> Result<FitRecord> {
    config.validate()?;
    let y_field = &historical[k];
    let x_field = leave_one_out_mean(historical, k)?;
    let y_full = control.basis.project_full(y_field)?;
    let x_full = control.basis.project_full(&x_field)?;
    let n = control.spectrum.len().min(y_full.len());

    let data = RegressionData::new(
        y_full.as_slice()[..n].to_vec(),
        x_full.as_slice()[..n].to_vec(),
        control.spectrum.lambdas()[..n].to_vec(),
    )?;
    let seed = tuple_seed(config.fit.seed, c, f, k);
    let opts = FitOptions { seed, ..config.fit.clone() };
    let fit = two_fit(&data, &opts)?;

    let (ci_low, ci_high) = credible_interval(fit.samples.beta(), config.credible_level)?;
    Ok(FitRecord {
        c,
        f,
        k,
        beta_mean: fit.beta_post_mean,
        beta_sd: fit.beta_post_sd,
        ci_low,
        ci_high,
        contains_one: ci_low <= 1.0 && 1.0 <= ci_high,
        crps: crps(fit.samples.beta(), 1.0)?,
        kappa_post: fit.kappa_post,
        converged: fit.converged,
        seed,
    })
}

/// Runs the full sweep sequentially. Individual fit failures are
/// recorded, never fatal. Parallel drivers can instead map `fit_tuple`
/// over `enumerate_tuples` themselves; the per-tuple seeds make the
/// result identical.
pub fn run_validation(
    controls: &[PreparedControl],
    historicals: &[Vec<FieldVector>],
    config: &StudyConfig,
) -> Result<ValidationOutput> {
    config.validate()?;
    if controls.is_empty() || historicals.is_empty() {
        return Err(Error::InvalidArgument("empty control or historical source list".into()));
    }
    if let Some(f) = historicals.iter().position(|h| h.len() < 2) {
        return Err(Error::InvalidArgument(alloc::format!(
            "historical ensemble {f} has fewer than 2 members"
        )));
    }
    let sizes: Vec<usize> = historicals.iter().map(|h| h.len()).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (c, f, k) in enumerate_tuples(controls.len(), &sizes) {
        match fit_tuple(&controls[c], &historicals[f], c, f, k, config) {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(FitFailure { c, f, k, message: alloc::format!("{e}") }),
        }
    }
    Ok(ValidationOutput { records, failures })
}
