//! Gridded time series and 25-year trend-field extraction.
//!
//! Control runs are broken into consecutive non-overlapping windows
//! (overlapping segments would violate the independence assumed by the
//! empirical-covariance divisor), and an ordinary-least-squares slope is
//! fit per grid cell, rescaled to a per-25-year rate. Time stamps are in
//! years; monthly data uses fractional years.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::covariance::FieldVector;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Years per trend window; trends are reported per this period.
pub const TREND_WINDOW_YEARS: f64 = 25.0;

/// A time series of fields on a grid: one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedSeries {
    grid: Grid,
    times: Vec<f64>,
    values: DMatrix<f64>,
}

impl GriddedSeries {
    pub fn new(grid: Grid, times: Vec<f64>, values: DMatrix<f64>) -> Result<GriddedSeries> {
        if values.nrows() != times.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} rows for {} time stamps",
                values.nrows(),
                times.len()
            )));
        }
        if values.ncols() != grid.n_grid() {
            return Err(Error::GridMismatch { expected: grid.n_grid(), found: values.ncols() });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("series contains non-finite values".into()));
        }
        Ok(GriddedSeries { grid, times, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_time(&self) -> usize {
        self.times.len()
    }
}

/// OLS slope of `(t, v)` pairs, rescaled to units per 25 years.
pub fn ols_trend(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(alloc::format!(
            "trend needs at least 3 points, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let t_mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let v_mean = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut stt = 0.0;
    let mut stv = 0.0;
    for &(t, v) in pairs {
        let dt = t - t_mean;
        stt += dt * dt;
        stv += dt * (v - v_mean);
    }
    if stt <= 0.0 {
        return Err(Error::InvalidArgument("degenerate time axis".into()));
    }
    Ok(stv / stt * TREND_WINDOW_YEARS)
}

/// Splits a series into consecutive non-overlapping windows of
/// `window_years`, dropping any trailing remainder shorter than a window.
pub fn segment_control(series: &GriddedSeries, window_years: f64) -> Result<Vec<GriddedSeries>> {
    if !(window_years > 0.0) {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    let t0 = series.times[0];
    let mut segments = Vec::new();
    let mut start = 0usize;
    loop {
        let window_end = t0 + (segments.len() + 1) as f64 * window_years;
        let end = series.times[start..]
            .iter()
            .position(|&t| t >= window_end)
            .map(|p| start + p);
        match end {
            Some(end) => {
                segments.push(slice_rows(series, start, end));
                start = end;
            }
            None => break,
        }
    }
    // A trailing run is a complete segment when it reaches within one
    // sampling step of the final window's end (the last sample of a
    // window sits one step before the boundary); anything shorter is
    // dropped.
    if start < series.n_time() && series.n_time() >= 2 {
        let dt = series.times[series.n_time() - 1] - series.times[series.n_time() - 2];
        let span =
            series.times[series.n_time() - 1] - (t0 + segments.len() as f64 * window_years);
        if span + dt >= window_years - 1e-9 {
            segments.push(slice_rows(series, start, series.n_time()));
        }
    }
    if segments.is_empty() {
        return Err(Error::InvalidArgument(alloc::format!(
            "series spans less than one {window_years}-year window"
        )));
    }
    Ok(segments)
}

fn slice_rows(series: &GriddedSeries, start: usize, end: usize) -> GriddedSeries {
    GriddedSeries {
        grid: series.grid.clone(),
        times: series.times[start..end].to_vec(),
        values: series.values.rows(start, end - start).clone_owned(),
    }
}

/// Per-cell OLS trend of the whole series.
pub fn trend_field(series: &GriddedSeries) -> Result<FieldVector> {
    let n_grid = series.grid.n_grid();
    let mut out = Vec::with_capacity(n_grid);
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(series.n_time());
    for cell in 0..n_grid {
        pairs.clear();
        pairs.extend(
            series
                .times
                .iter()
                .zip(series.values.column(cell).iter())
                .map(|(&t, &v)| (t, v)),
        );
        out.push(ols_trend(&pairs)?);
    }
    FieldVector::new(series.grid.clone(), out)
}

/// Averages monthly rows into calendar-year means (the pre-averaging
/// toggle; trends may be fit on monthly or annual-mean data).
pub fn annual_mean_series(series: &GriddedSeries) -> Result<GriddedSeries> {
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut current_year = libm::floor(series.times[0]);
    let mut acc = alloc::vec![0.0f64; series.grid.n_grid()];
    let mut count = 0usize;
    for (i, &t) in series.times.iter().enumerate() {
        let year = libm::floor(t);
        if year != current_year && count > 0 {
            times.push(current_year + 0.5);
            rows.push(acc.iter().map(|v| v / count as f64).collect());
            acc.iter_mut().for_each(|v| *v = 0.0);
            count = 0;
            current_year = year;
        }
        for (a, &v) in acc.iter_mut().zip(series.values.row(i).iter()) {
            *a += v;
        }
        count += 1;
    }
    if count > 0 {
        times.push(current_year + 0.5);
        rows.push(acc.iter().map(|v| v / count as f64).collect());
    }
    let values = DMatrix::from_fn(rows.len(), series.grid.n_grid(), |i, j| rows[i][j]);
    GriddedSeries::new(series.grid.clone(), times, values)
}
