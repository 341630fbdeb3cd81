//! Library surface of the `fingerprint` binary: file formats, manifest
//! handling, the basis cache, and the command implementations.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use fingerprint_core::bayes::LikelihoodKind;
use fingerprint_core::BasisKind;

pub mod cache;
pub mod commands;
pub mod error;
pub mod formats;
pub mod manifest;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Laplace,
    Eof,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KlikArg {
    Chi2,
    Normal,
}

#[derive(Debug, Parser)]
#[command(name = "fingerprint", about = "Bayesian optimal fingerprinting pipeline")]
pub struct Cli {
    /// Manifest binding the grid, datasets, and pipeline options.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for emitted files (created if missing).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Base seed, overriding the manifest.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker count for the validation sweep; output is identical for
    /// any value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Basis family, overriding the manifest.
    #[arg(long, value_enum, global = true)]
    pub basis: Option<BasisArg>,
    /// Truncation likelihood, overriding the manifest.
    #[arg(long, value_enum, global = true)]
    pub klik: Option<KlikArg>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Compute (or reuse) the cached Laplacian basis for the grid.
    Basis,
    /// Extract 25-year trend fields from gridded series, segmenting
    /// control runs into non-overlapping windows.
    Trends,
    /// Empirical variance per basis component for each control ensemble.
    Spectrum,
    /// Full Bayesian fit of observation against the forced fingerprint.
    Fit,
    /// The known-truth leave-one-out validation sweep.
    Validate,
    /// Closed-form GLS reference fit at a fixed truncation.
    Gls {
        /// Truncation; defaults to everything the spectrum supports.
        #[arg(long)]
        kappa: Option<usize>,
    },
}

impl Cli {
    pub fn overrides(&self) -> manifest::Overrides {
        manifest::Overrides {
            seed: self.seed,
            basis: self.basis.map(|b| match b {
                BasisArg::Laplace => BasisKind::Laplacian,
                BasisArg::Eof => BasisKind::PrincipalComponent,
            }),
            klik: self.klik.map(|k| match k {
                KlikArg::Chi2 => LikelihoodKind::ChiSquared,
                KlikArg::Normal => LikelihoodKind::Normal,
            }),
        }
    }
}
