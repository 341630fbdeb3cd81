//! Subcommand implementations.

use std::path::{Path, PathBuf};

use fingerprint_core::bayes::{two_fit, FitOptions};
use fingerprint_core::covariance::area_weight_field;
use fingerprint_core::gls::{gls_beta, gls_stderr, residual_statistic, ProjectedRegressionData};
use fingerprint_core::metrics::{
    attribution_statistic, coverage_rate, credible_interval, detection_statistic, quantile, rmse,
    ATTRIBUTION_Z, DETECTION_Z,
};
use fingerprint_core::trends::{segment_control, trend_field, TREND_WINDOW_YEARS};
use fingerprint_core::validation::{
    enumerate_tuples, fit_tuple, prepare_control, FitRecord, PreparedControl, StudyConfig,
};
use fingerprint_core::bayes::RegressionData;
use fingerprint_core::{BasisKind, BasisSet, ControlEnsemble, FieldVector};
use rayon::prelude::*;

use crate::cache;
use crate::error::{CliError, Result};
use crate::formats::{fmt_float, load_field_file, load_series_file, write_field_file};
use crate::manifest::{Manifest, Role};

fn maybe_weight(manifest: &Manifest, fields: Vec<FieldVector>) -> Result<Vec<FieldVector>> {
    if !manifest.area_weighting {
        return Ok(fields);
    }
    fields
        .into_iter()
        .map(|f| Ok(area_weight_field(&manifest.grid, &f)?))
        .collect()
}

/// Loads every dataset of a role as a (model_id, members) ensemble, with
/// area weighting applied per the manifest.
fn load_ensembles(manifest: &Manifest, role: Role) -> Result<Vec<(String, Vec<FieldVector>)>> {
    let mut out = Vec::new();
    for ds in manifest.require_role(role)? {
        let (_, blocks) = load_field_file(&ds.path, Some(&manifest.grid))?;
        let fields = maybe_weight(manifest, blocks.into_iter().map(|b| b.field).collect())?;
        out.push((ds.model_id.clone(), fields));
    }
    Ok(out)
}

fn laplacian_basis_if_needed(
    manifest: &Manifest,
    out_dir: &Path,
) -> Result<Option<BasisSet>> {
    match manifest.basis_kind {
        BasisKind::Laplacian => {
            let (basis, _, _) = cache::get_or_compute(out_dir, &manifest.grid, manifest.kernel, false)?;
            Ok(Some(basis))
        }
        BasisKind::PrincipalComponent => Ok(None),
    }
}

fn prepared_controls(manifest: &Manifest, out_dir: &Path) -> Result<Vec<PreparedControl>> {
    let laplacian = laplacian_basis_if_needed(manifest, out_dir)?;
    let mut out = Vec::new();
    for (model_id, fields) in load_ensembles(manifest, Role::Control)? {
        let ens = ControlEnsemble::new(model_id, fields)?;
        out.push(prepare_control(&ens, manifest.basis_kind, laplacian.as_ref())?);
    }
    Ok(out)
}

pub fn basis_cmd(manifest: &Manifest, out_dir: &Path) -> Result<()> {
    let (basis, path, from_cache) =
        cache::get_or_compute(out_dir, &manifest.grid, manifest.kernel, false)?;
    println!(
        "basis: {} vectors on the {}x{} grid ({}) -> {}",
        basis.n_basis(),
        manifest.grid.n_lat(),
        manifest.grid.n_lon(),
        if from_cache { "cache hit" } else { "computed" },
        path.display()
    );
    Ok(())
}

pub fn trends_cmd(manifest: &Manifest, out_dir: &Path) -> Result<()> {
    let prov = manifest.provenance("trends");
    let mut wrote = 0usize;
    for ds in &manifest.datasets {
        let (series, _, _) = load_series_file(&ds.path, Some(&manifest.grid))?;
        let fields: Vec<(String, FieldVector)> = match ds.role {
            // controls are chopped into non-overlapping windows, one
            // pseudo-independent trend field per window
            Role::Control => segment_control(&series, TREND_WINDOW_YEARS)?
                .iter()
                .enumerate()
                .map(|(i, seg)| Ok((format!("{}_seg{i}", ds.model_id), trend_field(seg)?)))
                .collect::<Result<_>>()?,
            _ => vec![(ds.model_id.clone(), trend_field(&series)?)],
        };
        let out_path = out_dir.join(format!("trends_{}.txt", ds.model_id));
        let blocks: Vec<(&str, &str, &[f64])> = fields
            .iter()
            .map(|(id, f)| (ds.role.name(), id.as_str(), f.values()))
            .collect();
        write_field_file(&out_path, &manifest.grid, &blocks, &prov)?;
        println!("trends: {} -> {} ({} fields)", ds.path.display(), out_path.display(), blocks.len());
        wrote += 1;
    }
    if wrote == 0 {
        return Err(CliError::Data("no datasets in manifest".into()));
    }
    Ok(())
}

pub fn spectrum_cmd(manifest: &Manifest, out_dir: &Path) -> Result<()> {
    let prov = manifest.provenance("spectrum");
    for control in prepared_controls(manifest, out_dir)? {
        let out_path = out_dir.join(format!("spectrum_{}.txt", control.model_id));
        let mut out = String::new();
        out.push_str(&format!("#provenance {prov}\n"));
        out.push_str("#columns index lambda\n");
        for (i, &l) in control.spectrum.lambdas().iter().enumerate() {
            out.push_str(&format!("{i} {}\n", fmt_float(l)));
        }
        std::fs::write(&out_path, out)?;
        println!(
            "spectrum: {} components for {} -> {}",
            control.spectrum.len(),
            control.model_id,
            out_path.display()
        );
    }
    Ok(())
}

/// Projects the observation and fingerprint through a prepared control
/// and builds the regression data.
fn regression_data(
    control: &PreparedControl,
    y: &FieldVector,
    x: &FieldVector,
) -> Result<RegressionData> {
    let y_full = control.basis.project_full(y)?;
    let x_full = control.basis.project_full(x)?;
    let n = control.spectrum.len().min(y_full.len());
    Ok(RegressionData::new(
        y_full.as_slice()[..n].to_vec(),
        x_full.as_slice()[..n].to_vec(),
        control.spectrum.lambdas()[..n].to_vec(),
    )?)
}

fn observation_and_fingerprint(manifest: &Manifest) -> Result<(FieldVector, FieldVector)> {
    let obs = manifest.require_role(Role::Observation)?;
    if obs.len() != 1 {
        return Err(CliError::Data(format!(
            "fit needs exactly one observation dataset, found {}",
            obs.len()
        )));
    }
    let (_, obs_blocks) = load_field_file(&obs[0].path, Some(&manifest.grid))?;
    if obs_blocks.len() != 1 {
        return Err(CliError::Data(format!(
            "observation file {} must hold exactly one field, found {}",
            obs[0].path.display(),
            obs_blocks.len()
        )));
    }
    let y = maybe_weight(manifest, vec![obs_blocks.into_iter().next().unwrap().field])?
        .into_iter()
        .next()
        .unwrap();

    // the fingerprint is the mean over all historical members
    let mut members = Vec::new();
    for (_, fields) in load_ensembles(manifest, Role::Historical)? {
        members.extend(fields);
    }
    let mut sum = members[0].as_vector().clone();
    for m in &members[1..] {
        sum += m.as_vector();
    }
    sum /= members.len() as f64;
    let x = FieldVector::new(manifest.grid.clone(), sum.as_slice().to_vec())?;
    Ok((y, x))
}

pub fn fit_cmd(manifest: &Manifest, out_dir: &Path) -> Result<()> {
    let prov = manifest.provenance("fit");
    let (y, x) = observation_and_fingerprint(manifest)?;
    for control in prepared_controls(manifest, out_dir)? {
        let data = regression_data(&control, &y, &x)?;
        let fit = two_fit(&data, &manifest.fit_options())?;

        let (ci_low, ci_high) = credible_interval(fit.samples.beta(), manifest.credible_level)?;
        let (a_low, a_high) = credible_interval(fit.samples.beta(), 0.95)?;
        let det = detection_statistic(fit.beta_post_mean, fit.beta_post_sd)?;
        let att = attribution_statistic(fit.beta_post_mean, fit.beta_post_sd)?;

        let out_path = out_dir.join(format!("fit_{}.txt", control.model_id));
        let mut out = String::new();
        out.push_str(&format!("#provenance {prov}\n"));
        out.push_str(&format!("control = {}\n", control.model_id));
        out.push_str(&format!("beta_post_mean = {}\n", fmt_float(fit.beta_post_mean)));
        out.push_str(&format!("beta_post_sd = {}\n", fmt_float(fit.beta_post_sd)));
        out.push_str(&format!("kappa_post = {}\n", fit.kappa_post));
        out.push_str(&format!("ci_low = {}\n", fmt_float(ci_low)));
        out.push_str(&format!("ci_high = {}\n", fmt_float(ci_high)));
        out.push_str(&format!("detection_statistic = {}\n", fmt_float(det)));
        out.push_str(&format!("attribution_statistic = {}\n", fmt_float(att)));
        out.push_str(&format!("detected = {}\n", det > DETECTION_Z));
        out.push_str(&format!("attributed = {}\n", a_low <= 1.0 && 1.0 <= a_high));
        out.push_str(&format!("attribution_z = {}\n", fmt_float(ATTRIBUTION_Z)));
        out.push_str(&format!("n_iterations = {}\n", fit.n_iterations));
        out.push_str(&format!("converged = {}\n", fit.converged));
        std::fs::write(&out_path, out)?;

        // chain file: one retained draw per row
        let chain_path = out_dir.join(format!("chain_{}.txt", control.model_id));
        let mut chain = String::new();
        chain.push_str(&format!("#provenance {prov}\n"));
        chain.push_str("#columns beta");
        for i in 1..=fit.samples.kappa() {
            chain.push_str(&format!(" lambda_{i}"));
        }
        chain.push('\n');
        for j in 0..fit.samples.m() {
            chain.push_str(&fmt_float(fit.samples.beta()[j]));
            for &l in fit.samples.lambda_row(j) {
                chain.push(' ');
                chain.push_str(&fmt_float(l));
            }
            chain.push('\n');
        }
        std::fs::write(&chain_path, chain)?;

        if !fit.converged {
            eprintln!(
                "warning: fit for {} did not converge within {} iterations (partial output)",
                control.model_id, fit.n_iterations
            );
        }
        println!(
            "fit[{}]: beta = {:.4} +/- {:.4}, kappa = {}, detected = {}, attributed = {} -> {}",
            control.model_id,
            fit.beta_post_mean,
            fit.beta_post_sd,
            fit.kappa_post,
            det > DETECTION_Z,
            a_low <= 1.0 && 1.0 <= a_high,
            out_path.display()
        );
    }
    Ok(())
}

pub fn gls_cmd(manifest: &Manifest, out_dir: &Path, kappa: Option<usize>) -> Result<()> {
    let prov = manifest.provenance("gls");
    let (y, x) = observation_and_fingerprint(manifest)?;
    for control in prepared_controls(manifest, out_dir)? {
        let data = regression_data(&control, &y, &x)?;
        let k = kappa.unwrap_or_else(|| data.kappa_max(manifest.kappa_cap));
        if k < 2 || k > data.n_basis() {
            return Err(CliError::Usage(format!(
                "kappa {k} outside [2, {}] for control {}",
                data.n_basis(),
                control.model_id
            )));
        }
        let d = ProjectedRegressionData::new(
            data.x_star()[..k].to_vec(),
            data.y_star()[..k].to_vec(),
            data.lambda_hat()[..k].to_vec(),
        )?;
        let beta = gls_beta(&d)?;
        let se = gls_stderr(&d)?;
        let stat = residual_statistic(&d, beta);

        let out_path = out_dir.join(format!("gls_{}.txt", control.model_id));
        let mut out = String::new();
        out.push_str(&format!("#provenance {prov}\n"));
        out.push_str(&format!("control = {}\n", control.model_id));
        out.push_str(&format!("kappa = {k}\n"));
        out.push_str(&format!("beta_hat = {}\n", fmt_float(beta)));
        out.push_str(&format!("stderr = {}\n", fmt_float(se)));
        out.push_str(&format!("residual_statistic = {}\n", fmt_float(stat)));
        std::fs::write(&out_path, out)?;
        println!(
            "gls[{}]: beta = {:.4} +/- {:.4} at kappa = {k} -> {}",
            control.model_id,
            beta,
            se,
            out_path.display()
        );
    }
    Ok(())
}

pub fn validate_cmd(manifest: &Manifest, out_dir: &Path, threads: Option<usize>) -> Result<()> {
    let prov = manifest.provenance("validate");
    let controls = prepared_controls(manifest, out_dir)?;
    let historicals: Vec<Vec<FieldVector>> = load_ensembles(manifest, Role::Historical)?
        .into_iter()
        .map(|(_, fields)| fields)
        .collect();
    if let Some(f) = historicals.iter().position(|h| h.len() < 2) {
        return Err(CliError::Data(format!(
            "historical ensemble {f} needs at least 2 members for leave-one-out"
        )));
    }
    let config = StudyConfig {
        basis_kind: manifest.basis_kind,
        fit: FitOptions { ..manifest.fit_options() },
        credible_level: manifest.credible_level,
    };

    let sizes: Vec<usize> = historicals.iter().map(|h| h.len()).collect();
    let tuples = enumerate_tuples(controls.len(), &sizes);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot build worker pool: {e}")))?;
    // per-tuple seeds make results independent of scheduling; collect
    // preserves tuple order
    let results: Vec<std::result::Result<FitRecord, String>> = pool.install(|| {
        tuples
            .par_iter()
            .map(|&(c, f, k)| {
                fit_tuple(&controls[c], &historicals[f], c, f, k, &config)
                    .map_err(|e| format!("{e}"))
            })
            .collect()
    });

    let mut records: Vec<FitRecord> = Vec::new();
    let mut failures: Vec<(usize, usize, usize, String)> = Vec::new();
    for (&(c, f, k), r) in tuples.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(msg) => failures.push((c, f, k, msg)),
        }
    }

    let records_path = out_dir.join("records.txt");
    let mut out = String::new();
    out.push_str(&format!("#provenance {prov}\n"));
    out.push_str(
        "#columns c f k seed beta_mean beta_sd ci_low ci_high contains_one crps kappa_post converged\n",
    );
    for r in &records {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {}\n",
            r.c,
            r.f,
            r.k,
            r.seed,
            fmt_float(r.beta_mean),
            fmt_float(r.beta_sd),
            fmt_float(r.ci_low),
            fmt_float(r.ci_high),
            r.contains_one,
            fmt_float(r.crps),
            r.kappa_post,
            r.converged,
        ));
    }
    for (c, f, k, msg) in &failures {
        out.push_str(&format!("#failure c={c} f={f} k={k} error={msg}\n"));
    }
    std::fs::write(&records_path, out)?;

    let agg_path = out_dir.join("aggregates.txt");
    std::fs::write(&agg_path, aggregate_table(&records, &controls, sizes.len(), &prov)?)?;

    println!(
        "validate: {} records, {} failures -> {} / {}",
        records.len(),
        failures.len(),
        records_path.display(),
        agg_path.display()
    );
    if !failures.is_empty() {
        eprintln!("warning: {} tuple(s) failed; see #failure lines (partial output)", failures.len());
    }
    Ok(())
}

/// Per-(control, historical) aggregates: coverage, RMSE, mean CRPS, the
/// 90% range and interquartile range of the posterior means, and the
/// median truncation.
fn aggregate_table(
    records: &[FitRecord],
    controls: &[PreparedControl],
    n_hist: usize,
    prov: &str,
) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("#provenance {prov}\n"));
    out.push_str(
        "#columns c f model_id n coverage rmse crps_mean beta_q05 beta_q25 beta_q50 beta_q75 beta_q95 kappa_median\n",
    );
    for c in 0..controls.len() {
        for f in 0..n_hist {
            let group: Vec<&FitRecord> =
                records.iter().filter(|r| r.c == c && r.f == f).collect();
            if group.is_empty() {
                continue;
            }
            let contains: Vec<bool> = group.iter().map(|r| r.contains_one).collect();
            let means: Vec<f64> = group.iter().map(|r| r.beta_mean).collect();
            let kappas: Vec<f64> = group.iter().map(|r| r.kappa_post as f64).collect();
            let crps_mean =
                group.iter().map(|r| r.crps).sum::<f64>() / group.len() as f64;
            out.push_str(&format!(
                "{c} {f} {} {} {} {} {} {} {} {} {} {} {}\n",
                controls[c].model_id,
                group.len(),
                fmt_float(coverage_rate(&contains)?),
                fmt_float(rmse(&means, 1.0)?),
                fmt_float(crps_mean),
                fmt_float(quantile(&means, 0.05)?),
                fmt_float(quantile(&means, 0.25)?),
                fmt_float(quantile(&means, 0.50)?),
                fmt_float(quantile(&means, 0.75)?),
                fmt_float(quantile(&means, 0.95)?),
                fmt_float(quantile(&kappas, 0.50)?),
            ));
        }
    }
    Ok(out)
}

/// Shared driver: resolves the output directory and dispatches.
pub fn run(
    manifest: &Manifest,
    out_dir: Option<PathBuf>,
    cmd: &crate::Cmd,
    threads: Option<usize>,
) -> Result<()> {
    let out_dir = out_dir.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    match cmd {
        crate::Cmd::Basis => basis_cmd(manifest, &out_dir),
        crate::Cmd::Trends => trends_cmd(manifest, &out_dir),
        crate::Cmd::Spectrum => spectrum_cmd(manifest, &out_dir),
        crate::Cmd::Fit => fit_cmd(manifest, &out_dir),
        crate::Cmd::Validate => validate_cmd(manifest, &out_dir, threads),
        crate::Cmd::Gls { kappa } => gls_cmd(manifest, &out_dir, *kappa),
    }
}
