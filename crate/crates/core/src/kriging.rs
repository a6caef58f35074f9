//! Separable spatio-temporal prediction.
//!
//! With the correlation factored as `R_S (x) R_T`, the conditional mean of
//! the field at new locations/frames splits into two small solves instead of
//! one `ST x ST` solve:
//!
//! 1. forecast each sensor's centered series forward in time,
//! 2. interpolate the forecasts across space with weights
//!    `beta_S = rho_S R_S^{-1}`.
//!
//! The prediction variance factors the same way: the explained fraction is a
//! product of a per-frame temporal term and a per-target spatial term. Both
//! shortcuts are exact identities, enforced against [`dense_kriging_oracle`]
//! (which materializes the full Kronecker system) by the test suite.

use nalgebra::{DMatrix, DVector};

use crate::acf::{
    build_correlation_matrix, cholesky_with_jitter, temporal_correlation_matrix, SpatialAcfModel,
    TemporalAcfModel, TemporalKind,
};
use crate::acf::parse_kv;
use crate::error::{Error, Result};
use crate::grid::{ObservationGrid, SensorLayout};
use crate::temporal_fit::{self, SeasonalArModel};
use crate::trend::TrendEstimate;

/// Largest dense temporal window a prediction will factor.
const DENSE_WINDOW_CAP: usize = 4096;

/// ACF magnitude below which a lag is treated as uninformative.
const ACF_FLOOR: f64 = 1e-8;

/// Temporal dependence model attached to a fitted field: either a
/// closed-form autocorrelation (AR(1)/MA(1) with a nugget) or a fitted
/// multiplicative seasonal autoregression.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalModel {
    Acf(TemporalAcfModel),
    SeasonalAr(SeasonalArModel),
}

impl TemporalModel {
    /// Frames of residual history a forecast consumes: the summed lags of
    /// the seasonal filter, or the dense regression window for ACF models.
    pub fn history_needed(&self) -> usize {
        match self {
            TemporalModel::Acf(m) => acf_window(m),
            TemporalModel::SeasonalAr(m) => m.history_needed(),
        }
    }

    pub fn to_kv(&self) -> String {
        match self {
            TemporalModel::Acf(m) => m.to_kv(),
            TemporalModel::SeasonalAr(m) => m.to_kv(),
        }
    }

    /// Dispatches on the `lags` key: seasonal AR files have one, ACF files
    /// have `kind` instead.
    pub fn from_kv(text: &str, path: &std::path::Path) -> Result<Self> {
        let kv = parse_kv(text, path)?;
        if kv.iter().any(|(k, _)| k == "lags") {
            Ok(TemporalModel::SeasonalAr(SeasonalArModel::from_kv(text, path)?))
        } else {
            Ok(TemporalModel::Acf(TemporalAcfModel::from_kv(text, path)?))
        }
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text, path)
    }

    /// FNV-1a hash of the canonical serialization; lets distributed nodes
    /// detect that they disagree about which model is in force.
    pub fn version_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_kv().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Everything needed to predict: trend level and scale plus the fitted
/// spatial and temporal correlation models.
#[derive(Debug, Clone)]
pub struct FittedField {
    pub trend: TrendEstimate,
    pub spatial: SpatialAcfModel,
    pub temporal: TemporalModel,
}

#[derive(Debug, Clone)]
pub struct PredictionTarget {
    locations: Vec<[f64; 2]>,
    horizon: usize,
}

impl PredictionTarget {
    /// `horizon` counts frames past the last observed one; 0 means
    /// same-frame interpolation at the final frame.
    pub fn new(locations: Vec<[f64; 2]>, horizon: usize) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidParameter("no prediction targets given".into()));
        }
        for (i, c) in locations.iter().enumerate() {
            if !(c[0].is_finite() && c[1].is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "target {i} has non-finite coordinates ({}, {})",
                    c[0], c[1]
                )));
            }
        }
        Ok(PredictionTarget { locations, horizon })
    }

    pub fn locations(&self) -> &[[f64; 2]] {
        &self.locations
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Rows of the prediction matrices: one per future frame, or a single
    /// row for same-frame interpolation.
    pub fn n_rows(&self) -> usize {
        self.horizon.max(1)
    }
}

#[derive(Debug, Clone)]
pub struct PredictionResult {
    /// `n_rows x targets` predicted values.
    pub mean: DMatrix<f64>,
    /// Same shape; `None` until `predict_variance` fills it in.
    pub variance: Option<DMatrix<f64>>,
    /// Spatial weights `beta_S` (`targets x sensors`) actually used.
    pub weights: DMatrix<f64>,
    /// Centered per-sensor forecasts, when the forecast-then-interpolate
    /// order was taken.
    pub zhat: Option<DMatrix<f64>>,
}

/// Which of the two commuting orders the mean prediction takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanStrategy {
    /// Forecast at targets only when there are fewer targets than sensors.
    Auto,
    /// Forecast every sensor column, then interpolate (the distributed
    /// runtime's order).
    ForecastFirst,
    /// Interpolate the recent history to the targets, then forecast there.
    InterpolateFirst,
}

/// Cross-correlation between targets and sensors (`targets x S`). A target
/// exactly on a sensor re-observes that sensor (correlation 1), so any
/// nugget is attributed to the sensor reading, not duplicated.
pub fn spatial_cross_correlation(
    model: &SpatialAcfModel,
    layout: &SensorLayout,
    locations: &[[f64; 2]],
) -> DMatrix<f64> {
    let coords = layout.coords();
    DMatrix::from_fn(locations.len(), coords.len(), |p, s| {
        let d = (locations[p][0] - coords[s][0]).hypot(locations[p][1] - coords[s][1]);
        model.eval(d)
    })
}

/// Simple-kriging weights `beta_S = rho_S R_S^{-1}` (`targets x S`), via
/// Cholesky. Rows need not sum to one.
pub fn spatial_weights(
    model: &SpatialAcfModel,
    layout: &SensorLayout,
    locations: &[[f64; 2]],
) -> Result<DMatrix<f64>> {
    let r_s = build_correlation_matrix(model, layout.dist())?;
    let (chol, _) = cholesky_with_jitter(&r_s)?;
    let rho = spatial_cross_correlation(model, layout, locations);
    Ok(chol.solve(&rho.transpose()).transpose())
}

/// `mu' + zhat beta_S^T` with a fixed summation order (ascending sensor
/// index), so the monolithic and distributed paths produce identical bits.
pub fn interpolate_forecasts(
    zhat: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    mu_prime: &[f64],
) -> DMatrix<f64> {
    assert_eq!(zhat.nrows(), mu_prime.len(), "one trend value per forecast row");
    assert_eq!(zhat.ncols(), weights.ncols(), "zhat columns must match weight columns");
    DMatrix::from_fn(zhat.nrows(), weights.nrows(), |h, p| {
        let mut acc = mu_prime[h];
        for s in 0..zhat.ncols() {
            acc += zhat[(h, s)] * weights[(p, s)];
        }
        acc
    })
}

/// Largest lag whose correlation magnitude clears the floor (0 if none).
fn significant_lag(model: &TemporalAcfModel) -> usize {
    let mut last = 0;
    for lag in 1..=DENSE_WINDOW_CAP {
        if model.eval(lag as i64).abs() > ACF_FLOOR {
            last = lag;
        } else if model.kind() == TemporalKind::Ar1 {
            break; // geometric decay: nothing further clears the floor
        }
    }
    last
}

/// Dense regression window for ACF models: ten times the largest
/// informative lag, at least one frame, never past the dense cap.
fn acf_window(model: &TemporalAcfModel) -> usize {
    (10 * significant_lag(model)).clamp(1, DENSE_WINDOW_CAP)
}

/// Forecast weights `rho_T R_T^{-1}` (`horizon x window`) for an ACF model
/// over a trailing window of observed frames.
fn acf_forecast_weights(
    model: &TemporalAcfModel,
    window: usize,
    horizon: usize,
) -> Result<DMatrix<f64>> {
    let r_t = temporal_correlation_matrix(model, window);
    let (chol, _) = cholesky_with_jitter(&r_t)?;
    // window frame j is lag window - j behind the last observed frame, so
    // horizon step k+1 sits window + k - j ahead of it
    let rho = DMatrix::from_fn(horizon, window, |k, j| model.eval((window + k - j) as i64));
    Ok(chol.solve(&rho.transpose()).transpose())
}

/// Dot of each weight row with the window, fixed ascending order.
fn apply_forecast_weights(weights: &DMatrix<f64>, window: &[f64]) -> Vec<f64> {
    (0..weights.nrows())
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..window.len() {
                acc += weights[(k, j)] * window[j];
            }
            acc
        })
        .collect()
}

/// Centered forecast of one series under either temporal model. The
/// distributed sensor nodes call exactly this function on their local
/// buffers, which is what makes them bit-identical to the monolithic path.
pub fn forecast_series(
    temporal: &TemporalModel,
    history: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    match temporal {
        TemporalModel::SeasonalAr(m) => temporal_fit::forecast(m, history, horizon),
        TemporalModel::Acf(m) => {
            if history.is_empty() {
                return Err(Error::InsufficientData("forecast needs at least one frame".into()));
            }
            let w = history.len().min(acf_window(m));
            let weights = acf_forecast_weights(m, w, horizon)?;
            Ok(apply_forecast_weights(&weights, &history[history.len() - w..]))
        }
    }
}

/// Column-wise [`forecast_series`] over a history matrix (`T x C` in,
/// `horizon x C` out). The ACF weights are factored once and reused.
pub fn forecast_columns(
    temporal: &TemporalModel,
    history: &DMatrix<f64>,
    horizon: usize,
) -> Result<DMatrix<f64>> {
    let (t, c) = history.shape();
    let mut out = DMatrix::zeros(horizon, c);
    match temporal {
        TemporalModel::SeasonalAr(m) => {
            for j in 0..c {
                let col: Vec<f64> = history.column(j).iter().cloned().collect();
                let f = temporal_fit::forecast(m, &col, horizon)?;
                for (k, v) in f.into_iter().enumerate() {
                    out[(k, j)] = v;
                }
            }
        }
        TemporalModel::Acf(m) => {
            if t == 0 {
                return Err(Error::InsufficientData("forecast needs at least one frame".into()));
            }
            let w = t.min(acf_window(m));
            let weights = acf_forecast_weights(m, w, horizon)?;
            for j in 0..c {
                let col: Vec<f64> = history.column(j).iter().skip(t - w).cloned().collect();
                let f = apply_forecast_weights(&weights, &col);
                for (k, v) in f.into_iter().enumerate() {
                    out[(k, j)] = v;
                }
            }
        }
    }
    Ok(out)
}

pub fn predict_mean(
    field: &FittedField,
    grid: &ObservationGrid,
    layout: &SensorLayout,
    target: &PredictionTarget,
) -> Result<PredictionResult> {
    predict_mean_with_strategy(field, grid, layout, target, MeanStrategy::Auto)
}

/// Two-step mean: centered forecasts, then spatial interpolation. The two
/// orders commute for a shared linear temporal model; `Auto` forecasts at
/// whichever of {sensors, targets} is smaller.
pub fn predict_mean_with_strategy(
    field: &FittedField,
    grid: &ObservationGrid,
    layout: &SensorLayout,
    target: &PredictionTarget,
    strategy: MeanStrategy,
) -> Result<PredictionResult> {
    grid.check_layout(layout)?;
    let weights = spatial_weights(&field.spatial, layout, target.locations())?;
    let z = field.trend.residuals(grid)?;
    let t_eff = z.nrows();
    let h = target.horizon();

    if h == 0 {
        let zrow = DMatrix::from_fn(1, z.ncols(), |_, j| z[(t_eff - 1, j)]);
        let mean = interpolate_forecasts(&zrow, &weights, &[field.trend.last()]);
        return Ok(PredictionResult { mean, variance: None, weights, zhat: Some(zrow) });
    }

    let mu_prime = field.trend.future(h);
    let p = target.locations().len();
    let s = layout.len();
    let forecast_first = match strategy {
        MeanStrategy::ForecastFirst => true,
        MeanStrategy::InterpolateFirst => false,
        MeanStrategy::Auto => p >= s,
    };
    if forecast_first {
        let zhat = forecast_columns(&field.temporal, &z, h)?;
        let mean = interpolate_forecasts(&zhat, &weights, mu_prime.as_slice());
        Ok(PredictionResult { mean, variance: None, weights, zhat: Some(zhat) })
    } else {
        let need = field.temporal.history_needed().min(t_eff);
        let tail = z.rows(t_eff - need, need).into_owned();
        let at_targets = interpolate_forecasts(&tail, &weights, &vec![0.0; need]);
        let zf = forecast_columns(&field.temporal, &at_targets, h)?;
        let mean = DMatrix::from_fn(h, p, |k, j| mu_prime[k] + zf[(k, j)]);
        Ok(PredictionResult { mean, variance: None, weights, zhat: None })
    }
}

/// Diagonal of `rho R^{-1} rho^T`: the explained share of unit prior
/// variance, one entry per row of `rho`.
fn explained_diag(r: &DMatrix<f64>, rho: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (chol, _) = cholesky_with_jitter(r)?;
    let x = chol.solve(&rho.transpose());
    Ok(DVector::from_fn(rho.nrows(), |k, _| {
        let mut acc = 0.0;
        for j in 0..rho.ncols() {
            acc += rho[(k, j)] * x[(j, k)];
        }
        acc
    }))
}

/// Factored prediction variance. Supported temporal cases: any horizon for
/// ACF models (dense over a capped lag window), horizon 0 or 1 for seasonal
/// AR (the one-step variance is `1 -` the innovation-variance ratio).
/// Multi-step seasonal variance is a capability error; the mean remains
/// available.
pub fn predict_variance(
    field: &FittedField,
    grid: &ObservationGrid,
    layout: &SensorLayout,
    target: &PredictionTarget,
) -> Result<DMatrix<f64>> {
    grid.check_layout(layout)?;
    let sigma2 = field.trend.sigma() * field.trend.sigma();
    let r_s = build_correlation_matrix(&field.spatial, layout.dist())?;
    let rho_s = spatial_cross_correlation(&field.spatial, layout, target.locations());
    let rs_expl = explained_diag(&r_s, &rho_s)?;

    let h = target.horizon();
    let t_eff = field.trend.n_valid();
    let rt_expl: Vec<f64> = if h == 0 {
        vec![1.0] // the frame itself is observed: time explains everything
    } else {
        match &field.temporal {
            TemporalModel::Acf(m) => {
                let w = t_eff.min(acf_window(m));
                let r_t = temporal_correlation_matrix(m, w);
                let rho_t =
                    DMatrix::from_fn(h, w, |k, j| m.eval((w + k - j) as i64));
                explained_diag(&r_t, &rho_t)?.iter().cloned().collect()
            }
            TemporalModel::SeasonalAr(m) => {
                if h > 1 {
                    return Err(Error::Unsupported(format!(
                        "prediction variance for a seasonal AR model is only available one \
                         step ahead (asked for horizon {h}); the mean is unaffected"
                    )));
                }
                vec![1.0 - temporal_fit::innovation_variance_ratio(m)?]
            }
        }
    };

    Ok(DMatrix::from_fn(rt_expl.len(), rs_expl.len(), |k, p| {
        (sigma2 * (1.0 - rt_expl[k] * rs_expl[p])).max(0.0)
    }))
}

/// Two-step conditional mean for explicit correlation factors:
/// `mu' + rho_T R_T^{-1} Z (rho_S R_S^{-1})^T`. This is the identity the
/// model-driven predictor rides on, exposed for direct verification against
/// the dense oracle.
pub fn two_step_mean(
    r_s: &DMatrix<f64>,
    rho_s: &DMatrix<f64>,
    r_t: &DMatrix<f64>,
    rho_t: &DMatrix<f64>,
    centered: &DMatrix<f64>,
    mu_prime: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (chol_t, _) = cholesky_with_jitter(r_t)?;
    let zhat = rho_t * chol_t.solve(centered);
    let (chol_s, _) = cholesky_with_jitter(r_s)?;
    let beta_t = chol_s.solve(&rho_s.transpose()); // S x P
    Ok(mu_prime + zhat * beta_t)
}

/// Entrywise conditional variance for explicit factors:
/// `sigma^2 (d'_T d'_S^T - e_T e_S^T)` with `e = diag(rho R^{-1} rho^T)`.
/// No clamping: this is the raw identity.
pub fn factored_variance(
    r_s: &DMatrix<f64>,
    rho_s: &DMatrix<f64>,
    rprime_s_diag: &DVector<f64>,
    r_t: &DMatrix<f64>,
    rho_t: &DMatrix<f64>,
    rprime_t_diag: &DVector<f64>,
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    let rs_expl = explained_diag(r_s, rho_s)?;
    let rt_expl = explained_diag(r_t, rho_t)?;
    Ok(DMatrix::from_fn(rt_expl.len(), rs_expl.len(), |k, p| {
        sigma2 * (rprime_t_diag[k] * rprime_s_diag[p] - rt_expl[k] * rs_expl[p])
    }))
}

/// Materializes the full Kronecker system and conditions directly:
/// `mean = mu' + rho R^{-1} vec(Z)`, `cov = sigma^2 (R' - rho R^{-1} rho^T)`.
/// Exists solely as the verification oracle for the factored shortcuts;
/// sizes are guarded accordingly. Vectorization is column-stacked, so
/// element `(frame, column)` sits at `column * n_frames + frame`.
#[allow(clippy::too_many_arguments)]
pub fn dense_kriging_oracle(
    r_s: &DMatrix<f64>,
    rho_s: &DMatrix<f64>,
    rprime_s: &DMatrix<f64>,
    r_t: &DMatrix<f64>,
    rho_t: &DMatrix<f64>,
    rprime_t: &DMatrix<f64>,
    centered: &DMatrix<f64>,
    mu_prime: &DMatrix<f64>,
    sigma2: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (s, t) = (r_s.nrows(), r_t.nrows());
    let (p, h) = (rho_s.nrows(), rho_t.nrows());
    if s * t > crate::kron::MATERIALIZE_CAP || p * h > crate::kron::MATERIALIZE_CAP {
        return Err(Error::SizeGuard(format!(
            "dense oracle limited to {} joint cells, got {}x{} observed and {}x{} predicted",
            crate::kron::MATERIALIZE_CAP,
            t,
            s,
            h,
            p
        )));
    }
    if centered.shape() != (t, s) || mu_prime.shape() != (h, p) {
        return Err(Error::InvalidData(format!(
            "data shapes {:?}/{:?} do not match the factors ({t}x{s} and {h}x{p})",
            centered.shape(),
            mu_prime.shape()
        )));
    }
    let r = r_s.kronecker(r_t);
    let rho = rho_s.kronecker(rho_t);
    let rprime = rprime_s.kronecker(rprime_t);

    let (chol, _) = cholesky_with_jitter(&r)?;
    let z = DVector::from_column_slice(centered.as_slice());
    let mean_vec = &rho * chol.solve(&z);
    let mean = mu_prime + DMatrix::from_column_slice(h, p, mean_vec.as_slice());
    let cov = (rprime - &rho * chol.solve(&rho.transpose())) * sigma2;
    Ok((mean, cov))
}
