//! Parametric-bootstrap standard errors for the fitted field parameters.
//!
//! A fitted field is a complete generative model: trend plus scaled separable
//! Gaussian residuals. Each replicate simulates a synthetic grid from that
//! model, re-runs the estimation pipeline on it (trend, sample spatial
//! correlation, spatial fit, temporal fit), and the spread of the replicated
//! estimates approximates the sampling distribution of the originals.
//!
//! Replicate `b` draws from an independent ChaCha stream `b + 1` of the base
//! seed, so reports are reproducible regardless of how the replicates are
//! scheduled across threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::acf::{build_correlation_matrix, cholesky_with_jitter, TemporalKind};
use crate::error::{Error, Result};
use crate::grid::{ObservationGrid, SensorLayout};
use crate::kriging::{FittedField, TemporalModel};
use crate::selection::percentile;
use crate::spatial_fit::{fit_spatial, sample_spatial_correlation};
use crate::temporal_fit::{
    default_burn_in, fit_seasonal_ar, innovation_variance_ratio, simulate, SeasonalArModel,
};
use crate::trend::{estimate_sigma, moving_average_trend, TrendEstimate};

/// Multi-start count for the spatial refits. Smaller than an exploratory
/// fit: every replicate is generated from (and so lands near) the original
/// parameters.
const REFIT_STARTS: usize = 3;

/// Fraction of failed replicates above which the report is flagged as
/// unreliable.
const FAILURE_FLAG_FRACTION: f64 = 0.2;

/// Draws one temporal column with the model's autocorrelation and marginal
/// variance exactly 1, so that spatial mixing and the field scale can be
/// applied afterwards.
fn unit_variance_column<R: Rng + ?Sized>(
    temporal: &TemporalModel,
    frames: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match temporal {
        TemporalModel::SeasonalAr(model) => {
            // innovation variance `ratio` yields marginal variance 1
            let ratio = innovation_variance_ratio(model)?;
            let unit = SeasonalArModel::new(
                model.lags().to_vec(),
                model.coeffs().to_vec(),
                ratio.sqrt(),
            )?;
            Ok(simulate(&unit, frames, default_burn_in(&unit, frames), rng))
        }
        TemporalModel::Acf(model) => {
            let weight = model.nugget_weight();
            let base: Vec<f64> = match model.kind() {
                TemporalKind::Ar1 => {
                    let phi = model.coefficient();
                    let unit =
                        SeasonalArModel::new(vec![1], vec![phi], (1.0 - phi * phi).sqrt())?;
                    simulate(&unit, frames, default_burn_in(&unit, frames), rng)
                }
                TemporalKind::Ma1 => {
                    // theta/(1 + theta^2) = alpha, unit-variance normalization
                    let alpha = model.coefficient();
                    let theta = if alpha.abs() < 1e-12 {
                        0.0
                    } else {
                        (1.0 - (1.0 - 4.0 * alpha * alpha).sqrt()) / (2.0 * alpha)
                    };
                    let norm = (1.0 + theta * theta).sqrt();
                    let e: Vec<f64> =
                        (0..frames + 1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    (0..frames).map(|i| (e[i + 1] + theta * e[i]) / norm).collect()
                }
            };
            // correlated share `weight`, independent share `1 - weight`
            let a = weight.sqrt();
            let b = (1.0 - weight).sqrt();
            Ok(base
                .into_iter()
                .map(|v| a * v + b * rng.sample::<f64, _>(StandardNormal))
                .collect())
        }
    }
}

/// Simulates a fully observed grid from the fitted field: independent
/// unit-variance temporal columns are mixed across sensors by the Cholesky
/// factor of the spatial correlation, scaled by the residual scale, and
/// shifted by the trend (whose head, before the first valid frame, is
/// backfilled with the first valid value).
pub fn simulate_dataset<R: Rng + ?Sized>(
    field: &FittedField,
    layout: &SensorLayout,
    frames: usize,
    start_time: f64,
    step: f64,
    rng: &mut R,
) -> Result<ObservationGrid> {
    if frames == 0 {
        return Err(Error::InvalidParameter("cannot simulate a grid with 0 frames".into()));
    }
    let s = layout.len();
    let r_s = build_correlation_matrix(&field.spatial, layout.dist())?;
    let (chol, _) = cholesky_with_jitter(&r_s)?;
    let l = chol.l();

    let mut g = DMatrix::zeros(frames, s);
    for j in 0..s {
        let col = unit_variance_column(&field.temporal, frames, rng)?;
        for (i, v) in col.into_iter().enumerate() {
            g[(i, j)] = v;
        }
    }
    let z = g * l.transpose();

    let sigma = field.trend.sigma();
    let m = field.trend.values();
    let lo = field.trend.valid_from();
    let hi = m.len() - 1;
    let values = DMatrix::from_fn(frames, s, |i, j| {
        let mu = m[i.clamp(lo, hi)];
        mu + sigma * z[(i, j)]
    });
    ObservationGrid::complete(start_time, step, layout.sensor_ids().to_vec(), values)
}

/// One row of a bootstrap report.
#[derive(Debug, Clone)]
pub struct ParamSummary {
    pub name: String,
    /// The original (non-bootstrap) estimate.
    pub estimate: f64,
    /// Standard deviation of the replicated estimates.
    pub std_err: f64,
    /// 2.5% quantile of the replicated estimates.
    pub q025: f64,
    /// 97.5% quantile of the replicated estimates.
    pub q975: f64,
}

#[derive(Debug, Clone)]
pub struct BootstrapReport {
    pub replicates: usize,
    /// Replicates dropped because some refit step failed or diverged.
    pub failures: usize,
    pub base_seed: u64,
    pub params: Vec<ParamSummary>,
    /// Set when more than 20% of the replicates failed; the remaining
    /// spread is then a poor guide to the sampling distribution.
    pub unreliable: bool,
}

/// Names and original estimates of the parameters a bootstrap run tracks:
/// spatial range, smoothness when the family has one, nugget (complement of
/// the correlated weight), and the seasonal AR coefficients when the
/// temporal model was itself fitted.
fn tracked_params(field: &FittedField) -> (Vec<String>, Vec<f64>) {
    let mut names = vec!["range".to_string()];
    let mut estimates = vec![field.spatial.range()];
    if let Some(s) = field.spatial.smoothness() {
        names.push("smoothness".to_string());
        estimates.push(s);
    }
    names.push("nugget".to_string());
    estimates.push(1.0 - field.spatial.nugget_weight());
    if let TemporalModel::SeasonalAr(model) = &field.temporal {
        for (k, &phi) in model.coeffs().iter().enumerate() {
            names.push(format!("phi{}", k + 1));
            estimates.push(phi);
        }
    }
    (names, estimates)
}

/// Re-runs the estimation pipeline on one simulated grid and returns the
/// tracked parameter vector, in the same order as [`tracked_params`].
fn refit_params(
    field: &FittedField,
    layout: &SensorLayout,
    grid: &ObservationGrid,
) -> Result<Vec<f64>> {
    let window = field.trend.window();
    let trend = if window == 0 {
        let mean = grid.values().iter().sum::<f64>() / grid.values().len() as f64;
        let flat = TrendEstimate::constant(mean, grid.n_frames(), 0.0)?;
        let sigma = estimate_sigma(grid, &flat)?;
        TrendEstimate::constant(mean, grid.n_frames(), sigma)?
    } else {
        moving_average_trend(grid, window)?
    };

    let sample = sample_spatial_correlation(grid, &trend)?;
    let sfit = fit_spatial(field.spatial.family(), layout.dist(), &sample, REFIT_STARTS)?;
    if !sfit.converged {
        return Err(Error::Numerical("spatial refit did not converge".into()));
    }
    let mut params = vec![sfit.model.range()];
    if let Some(s) = sfit.model.smoothness() {
        params.push(s);
    }
    params.push(1.0 - sfit.model.nugget_weight());

    if let TemporalModel::SeasonalAr(model) = &field.temporal {
        let resid = trend.residuals(grid)?;
        let tfit = fit_seasonal_ar(&resid, model.lags())?;
        if !tfit.converged {
            return Err(Error::Numerical("temporal refit did not converge".into()));
        }
        params.extend_from_slice(tfit.model.coeffs());
    }
    Ok(params)
}

/// Parametric-bootstrap standard errors and percentile intervals for the
/// field's fitted parameters. Simulates `replicates` grids of `frames`
/// frames from the field, refits each, and summarizes the replicated
/// estimates. Failed replicates are dropped and counted; the report is
/// flagged unreliable when more than 20% fail.
pub fn bootstrap_standard_errors(
    field: &FittedField,
    layout: &SensorLayout,
    frames: usize,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if replicates < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 bootstrap replicates to estimate a spread, got {replicates}"
        )));
    }
    if layout.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "spatial bootstrap needs at least 2 sensors, got {}",
            layout.len()
        )));
    }
    let (names, estimates) = tracked_params(field);

    let runs: Vec<Result<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            let grid = simulate_dataset(field, layout, frames, 0.0, 1.0, &mut rng)?;
            refit_params(field, layout, &grid)
        })
        .collect();

    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(replicates); names.len()];
    let mut failures = 0usize;
    let mut first_failure: Option<String> = None;
    for run in runs {
        match run {
            Ok(params) => {
                for (p, &v) in params.iter().enumerate() {
                    series[p].push(v);
                }
            }
            Err(e) => {
                failures += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let kept = replicates - failures;
    if kept < 2 {
        return Err(Error::Numerical(format!(
            "only {kept} of {replicates} bootstrap replicates succeeded; first failure: {}",
            first_failure.unwrap_or_else(|| "none recorded".into())
        )));
    }

    let params = names
        .into_iter()
        .zip(estimates)
        .zip(series.iter_mut())
        .map(|((name, estimate), reps)| {
            let n = reps.len() as f64;
            let mean = reps.iter().sum::<f64>() / n;
            let var = reps.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            ParamSummary {
                name,
                estimate,
                std_err: var.sqrt(),
                q025: percentile(reps, 0.025),
                q975: percentile(reps, 0.975),
            }
        })
        .collect();

    Ok(BootstrapReport {
        replicates,
        failures,
        base_seed: seed,
        params,
        unreliable: (failures as f64) > FAILURE_FLAG_FRACTION * replicates as f64,
    })
}
