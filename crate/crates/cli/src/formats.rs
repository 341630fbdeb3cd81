//! Plain-text gridded file formats.
//!
//! A field file holds `#grid n_lat n_lon`, then one or more blocks of
//! `#field <role> <model_id>` followed by one value per line in
//! canonical cell order (longitude fastest). A series file instead
//! carries `#times t_1 .. t_n` after the grid header and one row of
//! values per time step. Floats are written with 17 significant digits
//! so a write/read cycle is bit-exact.

use std::fs;
use std::path::Path;

use fingerprint_core::trends::GriddedSeries;
use fingerprint_core::{FieldVector, Grid};
use nalgebra::DMatrix;

use crate::error::{CliError, Result};

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct FieldBlock {
    pub role: String,
    pub model_id: String,
    pub field: FieldVector,
}

fn parse_float(tok: &str, path: &Path, line_no: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| {
        CliError::Data(format!("{}:{line_no}: unparseable value {tok:?}", path.display()))
    })?;
    if !v.is_finite() {
        return Err(CliError::Data(format!(
            "{}:{line_no}: non-finite value {tok}",
            path.display()
        )));
    }
    Ok(v)
}

fn parse_grid_header(line: &str, path: &Path, line_no: usize) -> Result<Grid> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(CliError::Data(format!(
            "{}:{line_no}: malformed header {line:?}, expected '#grid n_lat n_lon'",
            path.display()
        )));
    }
    let n_lat: usize = parts[1]
        .parse()
        .map_err(|_| CliError::Data(format!("{}:{line_no}: bad n_lat", path.display())))?;
    let n_lon: usize = parts[2]
        .parse()
        .map_err(|_| CliError::Data(format!("{}:{line_no}: bad n_lon", path.display())))?;
    Ok(Grid::build(n_lat, n_lon)?)
}

/// Parses a field file into its grid and field blocks.
pub fn load_field_file(path: &Path, expected_grid: Option<&Grid>) -> Result<(Grid, Vec<FieldBlock>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut grid: Option<Grid> = None;
    let mut blocks: Vec<FieldBlock> = Vec::new();
    let mut pending: Option<(String, String, Vec<f64>)> = None;

    let close = |grid: &Option<Grid>,
                     pending: &mut Option<(String, String, Vec<f64>)>,
                     blocks: &mut Vec<FieldBlock>|
     -> Result<()> {
        if let Some((role, model_id, values)) = pending.take() {
            let g = grid
                .clone()
                .ok_or_else(|| CliError::Data(format!("{}: missing #grid header", path.display())))?;
            if values.len() != g.n_grid() {
                return Err(CliError::Data(format!(
                    "{}: field '{model_id}' has {} values, grid expects {}",
                    path.display(),
                    values.len(),
                    g.n_grid()
                )));
            }
            blocks.push(FieldBlock {
                role,
                model_id,
                field: FieldVector::new(g, values)?,
            });
        }
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if rest.starts_with("grid") {
                grid = Some(parse_grid_header(trimmed, path, line_no)?);
            } else if rest.starts_with("field") {
                close(&grid, &mut pending, &mut blocks)?;
                let parts: Vec<&str> = trimmed.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(CliError::Data(format!(
                        "{}:{line_no}: malformed header {trimmed:?}, expected '#field <role> <model_id>'",
                        path.display()
                    )));
                }
                pending = Some((parts[1].to_string(), parts[2].to_string(), Vec::new()));
            } else if rest.starts_with("times") {
                return Err(CliError::Data(format!(
                    "{}:{line_no}: found a series file where a field file was expected",
                    path.display()
                )));
            }
            // other # lines (provenance etc.) are ignored
            continue;
        }
        match &mut pending {
            Some((_, _, values)) => values.push(parse_float(trimmed, path, line_no)?),
            None => {
                return Err(CliError::Data(format!(
                    "{}:{line_no}: value outside any #field block",
                    path.display()
                )))
            }
        }
    }
    close(&grid, &mut pending, &mut blocks)?;

    let grid = grid
        .ok_or_else(|| CliError::Data(format!("{}: missing #grid header", path.display())))?;
    if blocks.is_empty() {
        return Err(CliError::Data(format!("{}: no #field blocks", path.display())));
    }
    if let Some(exp) = expected_grid {
        if exp != &grid {
            return Err(CliError::Data(format!(
                "{}: grid {}x{} disagrees with manifest grid {}x{}",
                path.display(),
                grid.n_lat(),
                grid.n_lon(),
                exp.n_lat(),
                exp.n_lon()
            )));
        }
    }
    Ok((grid, blocks))
}

/// Writes field blocks with a provenance header.
pub fn write_field_file(
    path: &Path,
    grid: &Grid,
    blocks: &[(&str, &str, &[f64])],
    provenance: &str,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("#provenance {provenance}\n"));
    out.push_str(&format!("#grid {} {}\n", grid.n_lat(), grid.n_lon()));
    for (role, model_id, values) in blocks {
        out.push_str(&format!("#field {role} {model_id}\n"));
        for &v in *values {
            out.push_str(&fmt_float(v));
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses a gridded-series file.
pub fn load_series_file(path: &Path, expected_grid: Option<&Grid>) -> Result<(GriddedSeries, String, String)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut grid: Option<Grid> = None;
    let mut times: Option<Vec<f64>> = None;
    let mut role = String::from("series");
    let mut model_id = String::from("unknown");
    let mut rows: Vec<Vec<f64>> = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if rest.starts_with("grid") {
                grid = Some(parse_grid_header(trimmed, path, line_no)?);
            } else if rest.starts_with("times") {
                let ts: Result<Vec<f64>> = trimmed
                    .split_whitespace()
                    .skip(1)
                    .map(|t| parse_float(t, path, line_no))
                    .collect();
                times = Some(ts?);
            } else if rest.starts_with("field") {
                let parts: Vec<&str> = trimmed.split_whitespace().collect();
                if parts.len() == 3 {
                    role = parts[1].to_string();
                    model_id = parts[2].to_string();
                }
            }
            continue;
        }
        let row: Result<Vec<f64>> = trimmed
            .split_whitespace()
            .map(|t| parse_float(t, path, line_no))
            .collect();
        rows.push(row?);
    }
    let grid = grid
        .ok_or_else(|| CliError::Data(format!("{}: missing #grid header", path.display())))?;
    let times = times
        .ok_or_else(|| CliError::Data(format!("{}: missing #times header", path.display())))?;
    if let Some(exp) = expected_grid {
        if exp != &grid {
            return Err(CliError::Data(format!(
                "{}: grid disagrees with manifest grid",
                path.display()
            )));
        }
    }
    if rows.len() != times.len() {
        return Err(CliError::Data(format!(
            "{}: {} data rows for {} time stamps",
            path.display(),
            rows.len(),
            times.len()
        )));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != grid.n_grid()) {
        return Err(CliError::Data(format!(
            "{}: row has {} values, grid expects {}",
            path.display(),
            r.len(),
            grid.n_grid()
        )));
    }
    let values = DMatrix::from_fn(rows.len(), grid.n_grid(), |i, j| rows[i][j]);
    Ok((GriddedSeries::new(grid, times, values)?, role, model_id))
}

/// Writes a gridded series with a provenance header.
pub fn write_series_file(
    path: &Path,
    series: &GriddedSeries,
    role: &str,
    model_id: &str,
    provenance: &str,
) -> Result<()> {
    let grid = series.grid();
    let mut out = String::new();
    out.push_str(&format!("#provenance {provenance}\n"));
    out.push_str(&format!("#grid {} {}\n", grid.n_lat(), grid.n_lon()));
    out.push_str(&format!("#field {role} {model_id}\n"));
    out.push_str("#times");
    for &t in series.times() {
        out.push(' ');
        out.push_str(&fmt_float(t));
    }
    out.push('\n');
    for i in 0..series.n_time() {
        let row: Vec<String> = series.values().row(i).iter().map(|&v| fmt_float(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
