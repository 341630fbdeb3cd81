//! Laplacian basis cache.
//!
//! The dense eigensolve dominates pipeline runtime, so the basis is
//! cached per (grid, kernel variant) with a content hash over the data
//! section; a cache whose hash does not match its contents is rejected
//! as stale.

use std::path::{Path, PathBuf};

use fingerprint_core::laplacian::{compute_laplacian_basis, KernelVariant};
use fingerprint_core::{BasisKind, BasisSet, Grid};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::formats::fmt_float;

pub fn cache_path(out_dir: &Path, grid: &Grid, kernel: KernelVariant) -> PathBuf {
    out_dir.join(format!(
        "basis_{}x{}_{}.cache",
        grid.n_lat(),
        grid.n_lon(),
        kernel.name()
    ))
}

fn data_hash(data: &str) -> String {
    let mut h = Sha256::new();
    h.update(data.as_bytes());
    format!("{:x}", h.finalize())
}

pub fn save(path: &Path, basis: &BasisSet, kernel: KernelVariant) -> Result<()> {
    let grid = basis.grid();
    let mut data = String::new();
    data.push_str("#eigenvalues");
    for &ev in basis.operator_eigenvalues() {
        data.push(' ');
        data.push_str(&fmt_float(ev));
    }
    data.push('\n');
    // one row per grid cell, one column per basis vector
    for i in 0..grid.n_grid() {
        let row: Vec<String> =
            (0..basis.n_basis()).map(|j| fmt_float(basis.vectors()[(i, j)])).collect();
        data.push_str(&row.join(" "));
        data.push('\n');
    }
    let header = format!(
        "#basis {} {} {} {}\n#hash {}\n",
        grid.n_lat(),
        grid.n_lon(),
        kernel.name(),
        basis.n_basis(),
        data_hash(&data)
    );
    std::fs::write(path, header + &data)?;
    Ok(())
}

pub fn load(path: &Path, grid: &Grid, kernel: KernelVariant) -> Result<BasisSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.splitn(3, '\n');
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty cache", path.display())))?;
    let hash_line = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: truncated cache", path.display())))?;
    let data = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: truncated cache", path.display())))?;

    let hp: Vec<&str> = header.split_whitespace().collect();
    if hp.len() != 5 || hp[0] != "#basis" {
        return Err(CliError::Data(format!("{}: malformed cache header", path.display())));
    }
    let (n_lat, n_lon): (usize, usize) = (
        hp[1].parse().map_err(|_| CliError::Data("bad n_lat in cache".into()))?,
        hp[2].parse().map_err(|_| CliError::Data("bad n_lon in cache".into()))?,
    );
    if n_lat != grid.n_lat() || n_lon != grid.n_lon() {
        return Err(CliError::Data(format!(
            "{}: cache is for grid {n_lat}x{n_lon}, requested {}x{}",
            path.display(),
            grid.n_lat(),
            grid.n_lon()
        )));
    }
    if hp[3] != kernel.name() {
        return Err(CliError::Data(format!(
            "{}: cache is for kernel {}, requested {}",
            path.display(),
            hp[3],
            kernel.name()
        )));
    }
    let n_basis: usize =
        hp[4].parse().map_err(|_| CliError::Data("bad basis count in cache".into()))?;

    let expected_hash = hash_line
        .strip_prefix("#hash ")
        .ok_or_else(|| CliError::Data(format!("{}: missing cache hash", path.display())))?;
    if data_hash(data) != expected_hash {
        return Err(CliError::Data(format!(
            "{}: stale basis cache (content hash mismatch), delete and recompute",
            path.display()
        )));
    }

    let mut data_lines = data.lines();
    let ev_line = data_lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: truncated cache", path.display())))?;
    let eigenvalues: std::result::Result<Vec<f64>, _> =
        ev_line.split_whitespace().skip(1).map(str::parse::<f64>).collect();
    let eigenvalues =
        eigenvalues.map_err(|_| CliError::Data(format!("{}: bad eigenvalues", path.display())))?;
    if eigenvalues.len() != n_basis {
        return Err(CliError::Data(format!(
            "{}: {} eigenvalues for {} basis vectors",
            path.display(),
            eigenvalues.len(),
            n_basis
        )));
    }

    let mut vectors = nalgebra::DMatrix::<f64>::zeros(grid.n_grid(), n_basis);
    let mut rows = 0usize;
    for (i, line) in data_lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i >= grid.n_grid() {
            return Err(CliError::Data(format!("{}: too many cache rows", path.display())));
        }
        for (j, tok) in line.split_whitespace().enumerate() {
            if j >= n_basis {
                return Err(CliError::Data(format!("{}: too many cache columns", path.display())));
            }
            vectors[(i, j)] = tok
                .parse()
                .map_err(|_| CliError::Data(format!("{}: bad cache value", path.display())))?;
        }
        rows += 1;
    }
    if rows != grid.n_grid() {
        return Err(CliError::Data(format!(
            "{}: {} cache rows for {} grid cells",
            path.display(),
            rows,
            grid.n_grid()
        )));
    }
    Ok(BasisSet::new(grid.clone(), BasisKind::Laplacian, vectors, eigenvalues)?)
}

/// Loads the cached basis if present and valid, otherwise computes and
/// caches it. `force_recompute` skips the cache read.
pub fn get_or_compute(
    out_dir: &Path,
    grid: &Grid,
    kernel: KernelVariant,
    force_recompute: bool,
) -> Result<(BasisSet, PathBuf, bool)> {
    let path = cache_path(out_dir, grid, kernel);
    if !force_recompute && path.exists() {
        match load(&path, grid, kernel) {
            Ok(basis) => return Ok((basis, path, true)),
            Err(e) => eprintln!("warning: ignoring unusable basis cache: {e}"),
        }
    }
    let basis = compute_laplacian_basis(grid, kernel)?;
    save(&path, &basis, kernel)?;
    Ok((basis, path, false))
}
