//! Forward sensor-network selection under interpolation-error metrics.
//!
//! Starting from the single best-performing sensor, each step adds the
//! sensor whose inclusion most improves within-frame interpolation at the
//! sensors still inactive. Evaluation is leakage-free: the trend and the
//! predictions at step `k` are computed from the `k` active columns alone.
//! Scores may get worse as sensors are added; the trace records them as
//! they are.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ObservationGrid, SensorLayout};
use crate::kriging::{interpolate_forecasts, spatial_weights, FittedField};
use crate::trend::{moving_average_trend, TrendEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mae,
    P95,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::P95 => "p95",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mae" => Ok(Metric::Mae),
            "p95" => Ok(Metric::P95),
            other => Err(Error::InvalidParameter(format!(
                "unknown metric {other:?} (expected mae or p95)"
            ))),
        }
    }

    fn of(&self, m: &PredictionMetrics) -> f64 {
        match self {
            Metric::Mae => m.mae,
            Metric::P95 => m.p95,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PredictionMetrics {
    pub mae: f64,
    /// 95th percentile of absolute errors, interpolated between order
    /// statistics.
    pub p95: f64,
}

/// Empirical quantile with linear interpolation between order statistics
/// (the `(n-1)q` convention): `values` need not be sorted.
pub(crate) fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty() && (0.0..=1.0).contains(&q));
    values.sort_by(f64::total_cmp);
    let h = (values.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

pub fn prediction_metrics(
    predicted: &DMatrix<f64>,
    actual: &DMatrix<f64>,
) -> Result<PredictionMetrics> {
    if predicted.shape() != actual.shape() {
        return Err(Error::InvalidData(format!(
            "predicted {:?} and actual {:?} shapes differ",
            predicted.shape(),
            actual.shape()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidData("no cells to score".into()));
    }
    let mut errors: Vec<f64> =
        predicted.iter().zip(actual.iter()).map(|(p, a)| (p - a).abs()).collect();
    let mae = errors.iter().sum::<f64>() / errors.len() as f64;
    let p95 = percentile(&mut errors, 0.95);
    Ok(PredictionMetrics { mae, p95 })
}

/// The "one latent temperature" baseline: every inactive sensor predicted by
/// the per-frame mean over the active ones. Returns the predictions (frames
/// by inactive sensors) and the inactive column indices.
pub fn mean_baseline(
    grid: &ObservationGrid,
    active: &[usize],
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if active.is_empty() {
        return Err(Error::InvalidParameter("active set is empty".into()));
    }
    let s = grid.n_sensors();
    for &a in active {
        if a >= s {
            return Err(Error::InvalidParameter(format!(
                "active sensor index {a} out of range for {s} sensors"
            )));
        }
    }
    let inactive: Vec<usize> = (0..s).filter(|i| !active.contains(i)).collect();
    let v = grid.values();
    let t = grid.n_frames();
    let mut pred = DMatrix::zeros(t, inactive.len());
    for frame in 0..t {
        let mean = active.iter().map(|&a| v[(frame, a)]).sum::<f64>() / active.len() as f64;
        for c in 0..inactive.len() {
            pred[(frame, c)] = mean;
        }
    }
    Ok((pred, inactive))
}

/// Within-frame kriging from the active columns to the target columns,
/// leakage-free: the trend is re-estimated from the active columns alone.
/// Returns `(predicted, actual)` over the frames the trend covers.
pub(crate) fn interpolation_errors(
    grid: &ObservationGrid,
    layout: &SensorLayout,
    field: &FittedField,
    active: &[usize],
    targets: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sub_layout = layout.subset(active)?;
    let sub_values = DMatrix::from_fn(grid.n_frames(), active.len(), |t, j| {
        grid.values()[(t, active[j])]
    });
    let sub_grid = ObservationGrid::complete(
        grid.start_time(),
        grid.step(),
        sub_layout.sensor_ids().to_vec(),
        sub_values,
    )?;
    let window = field.trend.window();
    let trend = if window == 0 {
        let mean = sub_grid.values().iter().sum::<f64>() / sub_grid.values().len() as f64;
        TrendEstimate::constant(mean, grid.n_frames(), field.trend.sigma())?
    } else {
        moving_average_trend(&sub_grid, window)?
    };
    let z = trend.residuals(&sub_grid)?;
    let target_coords: Vec<[f64; 2]> = targets.iter().map(|&i| layout.coords()[i]).collect();
    let weights = spatial_weights(&field.spatial, &sub_layout, &target_coords)?;
    let mu: Vec<f64> = (trend.valid_from()..grid.n_frames())
        .map(|t| trend.value_at(t).unwrap())
        .collect();
    let predicted = interpolate_forecasts(&z, &weights, &mu);
    let actual = DMatrix::from_fn(z.nrows(), targets.len(), |t, j| {
        grid.values()[(trend.valid_from() + t, targets[j])]
    });
    Ok((predicted, actual))
}

#[derive(Debug, Clone)]
pub struct SelectionStep {
    pub added: String,
    pub added_index: usize,
    /// Active sensor ids after this step, in selection order.
    pub active: Vec<String>,
    pub score: f64,
    /// `(candidate id, score)` for every sensor considered at this step.
    pub candidate_scores: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct SelectionTrace {
    pub metric: Metric,
    pub steps: Vec<SelectionStep>,
}

impl SelectionTrace {
    pub fn selected_indices(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.added_index).collect()
    }
}

/// Greedy forward selection: step 1 picks the sensor that best interpolates
/// all the others; each later step adds the candidate minimizing the metric
/// over the remaining inactive sensors. Runs for `max_k` steps (capped one
/// short of the sensor count, after which nothing is left to score). Ties go
/// to the lowest sensor index.
pub fn forward_select(
    grid: &ObservationGrid,
    layout: &SensorLayout,
    field: &FittedField,
    metric: Metric,
    max_k: usize,
) -> Result<SelectionTrace> {
    grid.check_layout(layout)?;
    if !grid.is_fully_observed() {
        return Err(Error::InvalidData("selection needs an imputed grid".into()));
    }
    let s = grid.n_sensors();
    if s < 2 {
        return Err(Error::InvalidData("selection needs at least two sensors".into()));
    }
    let steps = max_k.min(s - 1);
    let mut active: Vec<usize> = Vec::new();
    let mut trace = SelectionTrace { metric, steps: Vec::with_capacity(steps) };
    for _ in 0..steps {
        let candidates: Vec<usize> = (0..s).filter(|i| !active.contains(i)).collect();
        let scored: Vec<(usize, f64)> = candidates
            .par_iter()
            .map(|&c| {
                let mut trial = active.clone();
                trial.push(c);
                trial.sort_unstable();
                let targets: Vec<usize> = (0..s).filter(|i| !trial.contains(i)).collect();
                let (pred, actual) = interpolation_errors(grid, layout, field, &trial, &targets)?;
                let m = prediction_metrics(&pred, &actual)?;
                Ok((c, metric.of(&m)))
            })
            .collect::<Result<_>>()?;
        let &(best, score) = scored
            .iter()
            .min_by(|(ci, si), (cj, sj)| si.total_cmp(sj).then(ci.cmp(cj)))
            .expect("candidates nonempty");
        if !score.is_finite() {
            return Err(Error::Numerical(format!(
                "selection score for sensor {} is not finite",
                layout.sensor_ids()[best]
            )));
        }
        active.push(best);
        trace.steps.push(SelectionStep {
            added: layout.sensor_ids()[best].clone(),
            added_index: best,
            active: active.iter().map(|&i| layout.sensor_ids()[i].clone()).collect(),
            score,
            candidate_scores: scored
                .iter()
                .map(|&(c, v)| (layout.sensor_ids()[c].clone(), v))
                .collect(),
        });
    }
    Ok(trace)
}
