//! Manifest loading and option resolution.
//!
//! The manifest binds a grid, the dataset files, and the pipeline
//! options; command-line flags override manifest options. Every emitted
//! file embeds the fully resolved options as a provenance header.

use std::path::{Path, PathBuf};

use fingerprint_core::bayes::{DfConvention, LikelihoodKind, FitOptions, DEFAULT_KAPPA_CAP};
use fingerprint_core::laplacian::KernelVariant;
use fingerprint_core::{BasisKind, Grid};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
struct ManifestFile {
    grid: GridSpec,
    #[serde(default)]
    options: OptionsSpec,
    #[serde(default, rename = "dataset")]
    datasets: Vec<DatasetSpec>,
}

#[derive(Debug, Deserialize)]
struct GridSpec {
    n_lat: usize,
    n_lon: usize,
}

#[derive(Debug, Default, Deserialize)]
struct OptionsSpec {
    basis: Option<String>,
    likelihood: Option<String>,
    area_weighting: Option<bool>,
    kernel: Option<String>,
    m: Option<usize>,
    burn_in: Option<usize>,
    seed: Option<u64>,
    credible_level: Option<f64>,
    kappa_cap: Option<usize>,
    df: Option<String>,
}

#[derive(Debug, Deserialize)]
struct DatasetSpec {
    role: String,
    path: String,
    model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Control,
    Historical,
    Observation,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Control => "control",
            Role::Historical => "historical",
            Role::Observation => "observation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub role: Role,
    pub path: PathBuf,
    pub model_id: String,
}

/// Flag values that override the manifest's options.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub basis: Option<BasisKind>,
    pub klik: Option<LikelihoodKind>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub grid: Grid,
    pub datasets: Vec<Dataset>,
    pub basis_kind: BasisKind,
    pub likelihood: LikelihoodKind,
    pub area_weighting: bool,
    pub kernel: KernelVariant,
    pub m: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub credible_level: f64,
    pub kappa_cap: usize,
    pub df: DfConvention,
}

impl Manifest {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        let parsed: ManifestFile = toml::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;

        let grid = Grid::build(parsed.grid.n_lat, parsed.grid.n_lon)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut datasets = Vec::new();
        for d in &parsed.datasets {
            let role = match d.role.as_str() {
                "control" => Role::Control,
                "historical" => Role::Historical,
                "observation" => Role::Observation,
                other => {
                    return Err(CliError::Data(format!(
                        "unknown dataset role {other:?} (expected control, historical or observation)"
                    )))
                }
            };
            let p = base.join(&d.path);
            if !p.exists() {
                return Err(CliError::Data(format!(
                    "dataset path {} does not exist",
                    p.display()
                )));
            }
            datasets.push(Dataset { role, path: p, model_id: d.model_id.clone() });
        }

        let o = &parsed.options;
        let basis_kind = match overrides.basis {
            Some(b) => b,
            None => match o.basis.as_deref().unwrap_or("laplace") {
                "laplace" => BasisKind::Laplacian,
                "eof" => BasisKind::PrincipalComponent,
                other => {
                    return Err(CliError::Data(format!(
                        "unknown basis {other:?} (expected laplace or eof)"
                    )))
                }
            },
        };
        let likelihood = match overrides.klik {
            Some(k) => k,
            None => {
                let name = o.likelihood.as_deref().unwrap_or("chi2");
                LikelihoodKind::from_name(name).ok_or_else(|| {
                    CliError::Data(format!("unknown likelihood {name:?} (expected chi2 or normal)"))
                })?
            }
        };
        let kernel_name = o.kernel.as_deref().unwrap_or("half-angle-sin2");
        let kernel = KernelVariant::from_name(kernel_name)
            .ok_or_else(|| CliError::Data(format!("unknown kernel variant {kernel_name:?}")))?;
        let df_name = o.df.as_deref().unwrap_or("kappa-minus-one");
        let df = DfConvention::from_name(df_name)
            .ok_or_else(|| CliError::Data(format!("unknown df convention {df_name:?}")))?;
        let credible_level = o.credible_level.unwrap_or(0.90);
        if !(0.0 < credible_level && credible_level < 1.0) {
            return Err(CliError::Data(format!(
                "credible_level {credible_level} outside (0,1)"
            )));
        }

        Ok(Manifest {
            grid,
            datasets,
            basis_kind,
            likelihood,
            area_weighting: o.area_weighting.unwrap_or(true),
            kernel,
            m: o.m.unwrap_or(2000),
            burn_in: o.burn_in.unwrap_or(1000),
            seed: overrides.seed.or(o.seed).unwrap_or(0),
            credible_level,
            kappa_cap: o.kappa_cap.unwrap_or(DEFAULT_KAPPA_CAP),
            df,
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            kind: self.likelihood,
            m: self.m,
            burn_in: self.burn_in,
            seed: self.seed,
            kappa_cap: self.kappa_cap,
            df: self.df,
            ..FitOptions::default()
        }
    }

    pub fn datasets_with_role(&self, role: Role) -> Vec<&Dataset> {
        self.datasets.iter().filter(|d| d.role == role).collect()
    }

    pub fn require_role(&self, role: Role) -> Result<Vec<&Dataset>> {
        let ds = self.datasets_with_role(role);
        if ds.is_empty() {
            return Err(CliError::Data(format!(
                "this command needs at least one dataset with role {:?}",
                role.name()
            )));
        }
        Ok(ds)
    }

    /// The fully resolved configuration on one line; embedded in every
    /// emitted file so any result is re-derivable from its own header.
    pub fn provenance(&self, cmd: &str) -> String {
        format!(
            "cmd={cmd} grid={}x{} basis={} klik={} area_weighting={} kernel={} m={} burn_in={} seed={} credible_level={} kappa_cap={} df={}",
            self.grid.n_lat(),
            self.grid.n_lon(),
            match self.basis_kind {
                BasisKind::Laplacian => "laplace",
                BasisKind::PrincipalComponent => "eof",
            },
            self.likelihood.name(),
            self.area_weighting,
            self.kernel.name(),
            self.m,
            self.burn_in,
            self.seed,
            self.credible_level,
            self.kappa_cap,
            self.df.name(),
        )
    }
}
