//! Pooled moving-average trend and residual scale.
//!
//! The mean surface is deliberately crude: one level `m_t` per frame, the
//! average of all `S * w` readings in the `w` frames strictly before `t`,
//! shared by every sensor. Correlation structure left in the residuals is
//! the kriging model's job. The first `w` frames have no trend value and are
//! excluded from every downstream computation; forecasts extrapolate the
//! last valid level as a constant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::ObservationGrid;

#[derive(Debug, Clone)]
pub struct TrendEstimate {
    /// Per-frame level; entries before `window` are NaN.
    m: DVector<f64>,
    window: usize,
    /// Pooled RMS of the residuals over valid frames.
    sigma: f64,
}

impl TrendEstimate {
    /// Assembles a trend from precomputed parts (synthetic data, replays).
    /// `window` may be 0, meaning every frame is valid.
    pub fn from_parts(m: DVector<f64>, window: usize, sigma: f64) -> Result<Self> {
        if m.len() <= window {
            return Err(Error::InsufficientData(format!(
                "{} frames leave no valid rows for window {window}",
                m.len()
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be nonnegative, got {sigma}")));
        }
        for t in window..m.len() {
            if !m[t].is_finite() {
                return Err(Error::InvalidData(format!("trend value at frame {t} is not finite")));
            }
        }
        Ok(TrendEstimate { m, window, sigma })
    }

    /// Flat trend over `frames` frames, valid everywhere.
    pub fn constant(level: f64, frames: usize, sigma: f64) -> Result<Self> {
        Self::from_parts(DVector::from_element(frames, level), 0, sigma)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// First frame (0-based) with a defined trend value.
    pub fn valid_from(&self) -> usize {
        self.window
    }

    pub fn n_frames(&self) -> usize {
        self.m.len()
    }

    /// Number of frames with a defined trend value.
    pub fn n_valid(&self) -> usize {
        self.m.len() - self.window
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn value_at(&self, frame: usize) -> Option<f64> {
        (frame >= self.window && frame < self.m.len()).then(|| self.m[frame])
    }

    /// Level at the last observed frame.
    pub fn last(&self) -> f64 {
        self.m[self.m.len() - 1]
    }

    /// Trend for `horizon` future frames: constant extrapolation of the last
    /// valid level. Horizon 0 yields an empty vector.
    pub fn future(&self, horizon: usize) -> DVector<f64> {
        DVector::from_element(horizon, self.last())
    }

    /// Centered residuals over the valid frames, `(T - w) x S`.
    pub fn residuals(&self, grid: &ObservationGrid) -> Result<DMatrix<f64>> {
        if grid.n_frames() != self.m.len() {
            return Err(Error::InvalidData(format!(
                "trend covers {} frames but the grid has {}",
                self.m.len(),
                grid.n_frames()
            )));
        }
        if !grid.is_fully_observed() {
            return Err(Error::InvalidData(
                "grid has missing cells; impute before detrending".into(),
            ));
        }
        let t_eff = self.n_valid();
        let s = grid.n_sensors();
        let v = grid.values();
        Ok(DMatrix::from_fn(t_eff, s, |i, j| v[(self.window + i, j)] - self.m[self.window + i]))
    }
}

/// Moving-average trend over a fully observed grid. Frame `t` averages the
/// `S * w` readings at frames `t-w .. t-1`, so the first `w` frames have no
/// value; `T` must exceed `w`. The residual scale is filled in via
/// [`estimate_sigma`].
pub fn moving_average_trend(grid: &ObservationGrid, window: usize) -> Result<TrendEstimate> {
    if window == 0 {
        return Err(Error::InvalidParameter("trend window must be at least 1 frame".into()));
    }
    if !grid.is_fully_observed() {
        return Err(Error::InvalidData(
            "grid has missing cells; impute before detrending".into(),
        ));
    }
    let t = grid.n_frames();
    let s = grid.n_sensors();
    if t <= window {
        return Err(Error::InsufficientData(format!(
            "{t} frames cannot support a {window}-frame trend window; need at least {}",
            window + 1
        )));
    }
    let v = grid.values();
    // prefix sums of per-frame row sums
    let mut prefix = Vec::with_capacity(t + 1);
    prefix.push(0.0f64);
    for i in 0..t {
        let mut row = 0.0;
        for j in 0..s {
            row += v[(i, j)];
        }
        prefix.push(prefix[i] + row);
    }
    let denom = (window * s) as f64;
    let mut m = DVector::from_element(t, f64::NAN);
    for i in window..t {
        m[i] = (prefix[i] - prefix[i - window]) / denom;
    }
    let mut trend = TrendEstimate { m, window, sigma: 0.0 };
    trend.sigma = estimate_sigma(grid, &trend)?;
    Ok(trend)
}

/// Pooled residual scale: root mean square of `y_{ts} - m_t` over all valid
/// cells.
pub fn estimate_sigma(grid: &ObservationGrid, trend: &TrendEstimate) -> Result<f64> {
    let resid = trend.residuals(grid)?;
    let n = (resid.nrows() * resid.ncols()) as f64;
    Ok((resid.iter().map(|r| r * r).sum::<f64>() / n).sqrt())
}
