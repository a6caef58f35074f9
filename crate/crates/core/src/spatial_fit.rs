//! Composite-likelihood estimation of the spatial correlation model.
//!
//! Instead of the full spatio-temporal likelihood, fitting maximizes the
//! spatial pseudo log likelihood
//!
//! `l_S(theta) = -(T_eff / 2) { log det R_S(theta) + tr(R_S(theta)^{-1} M) }`
//!
//! where `M` is the sample spatial correlation of the detrended residuals.
//! This treats frames as independent replicates of the spatial field; the
//! temporal dependence it ignores inflates uncertainty but not bias, and the
//! parametric bootstrap recovers honest standard errors.
//!
//! The optimizer works in transformed coordinates (log range, log
//! smoothness, logit nugget weight) so the search is unconstrained; hard
//! fitting bounds (Matern smoothness 30, power exponent 2) enter as infinite
//! penalties and estimates pinned against them are flagged.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::acf::{cholesky_with_jitter, SpatialAcfModel, SpatialFamily};
use crate::error::{Error, Result};
use crate::grid::ObservationGrid;
use crate::optim::{halton_point, nelder_mead, NelderMeadOptions};
use crate::trend::TrendEstimate;

/// Sample spatial correlation of detrended residuals.
#[derive(Debug, Clone)]
pub struct SampleSpatialCorrelation {
    matrix: DMatrix<f64>,
    frames_used: usize,
    standardized: bool,
}

impl SampleSpatialCorrelation {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn frames_used(&self) -> usize {
        self.frames_used
    }

    pub fn standardized(&self) -> bool {
        self.standardized
    }

    pub fn from_parts(matrix: DMatrix<f64>, frames_used: usize, standardized: bool) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidData("sample correlation must be square".into()));
        }
        Ok(SampleSpatialCorrelation { matrix, frames_used, standardized })
    }
}

fn residual_cross_moments(
    grid: &ObservationGrid,
    trend: &TrendEstimate,
) -> Result<(DMatrix<f64>, usize)> {
    let resid = trend.residuals(grid)?;
    let t_eff = resid.nrows();
    if t_eff < 2 {
        return Err(Error::InsufficientData(format!(
            "only {t_eff} valid frames after the trend window; need at least 2"
        )));
    }
    let s = resid.ncols();
    // sigma^2 = pooled mean square residual, M = Z^T Z / (T_eff sigma^2)
    let sigma2 = resid.iter().map(|z| z * z).sum::<f64>() / (t_eff * s) as f64;
    for j in 0..s {
        if resid.column(j).iter().all(|&z| z == 0.0) {
            return Err(Error::DegenerateSensor {
                sensor: grid.sensor_ids()[j].clone(),
                reason: "residuals have zero variance".into(),
            });
        }
    }
    if sigma2 == 0.0 {
        return Err(Error::InvalidData("all residuals are exactly zero".into()));
    }
    let m = resid.transpose() * &resid / (t_eff as f64 * sigma2);
    Ok((m, t_eff))
}

/// Sample spatial correlation standardized to a unit diagonal.
pub fn sample_spatial_correlation(
    grid: &ObservationGrid,
    trend: &TrendEstimate,
) -> Result<SampleSpatialCorrelation> {
    let (mut m, t_eff) = residual_cross_moments(grid, trend)?;
    let s = m.nrows();
    let scale: Vec<f64> = (0..s).map(|j| m[(j, j)].sqrt()).collect();
    for j in 0..s {
        for i in 0..s {
            m[(i, j)] /= scale[i] * scale[j];
        }
    }
    Ok(SampleSpatialCorrelation { matrix: m, frames_used: t_eff, standardized: true })
}

/// Raw (unstandardized) sample spatial correlation; its trace is exactly the
/// sensor count because the pooled scale divides out. Used by the likelihood
/// consistency oracle.
pub fn sample_spatial_correlation_raw(
    grid: &ObservationGrid,
    trend: &TrendEstimate,
) -> Result<SampleSpatialCorrelation> {
    let (m, t_eff) = residual_cross_moments(grid, trend)?;
    Ok(SampleSpatialCorrelation { matrix: m, frames_used: t_eff, standardized: false })
}

/// `log det R_S + tr(R_S^{-1} M)`, the per-frame negative pseudo
/// log likelihood up to the factor 1/2. Returns None when the model cannot
/// produce a positive definite matrix at this distance configuration.
fn logdet_plus_trace(
    model: &SpatialAcfModel,
    dist: &DMatrix<f64>,
    mhat: &DMatrix<f64>,
) -> Option<f64> {
    let n = dist.nrows();
    let mut r = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            r[(i, j)] = model.eval(dist[(i, j)]);
        }
    }
    // any jitter the factorization needed is part of the factored matrix, so
    // the log determinant read off the factor is consistent with the solve
    let (chol, _) = cholesky_with_jitter(&r).ok()?;
    let l = chol.l_dirty();
    let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let trace = chol.solve(mhat).trace();
    Some(logdet + trace)
}

/// Spatial pseudo log likelihood `-(T_eff/2)(log det R_S + tr(R_S^{-1} M))`.
pub fn spatial_pseudo_loglik(
    model: &SpatialAcfModel,
    dist: &DMatrix<f64>,
    sample: &SampleSpatialCorrelation,
) -> Result<f64> {
    let core = logdet_plus_trace(model, dist, sample.matrix()).ok_or_else(|| {
        Error::Numerical("correlation matrix not positive definite for this model".into())
    })?;
    Ok(-(sample.frames_used() as f64) / 2.0 * core)
}

/// Fitting bounds in natural parameter space.
pub const MATERN_FIT_SMOOTHNESS_MAX: f64 = 30.0;
pub const POWEREXP_FIT_EXPONENT_MAX: f64 = 2.0;
const SMOOTHNESS_FIT_MIN: f64 = 0.05;
/// Clamp for the logit coordinate of the nugget weight; 1/(1+e^-37) rounds
/// to exactly 1.0 in f64, so past the clamp the objective is exactly flat.
const LOGIT_SATURATION: f64 = 37.0;

#[derive(Debug, Clone)]
pub struct SpatialFitResult {
    pub model: SpatialAcfModel,
    /// Pseudo log likelihood at the optimum (includes the `T_eff` factor).
    pub loglik: f64,
    /// True when the simplex collapsed and the optimum is interior
    /// (finite-difference gradient below 1e-5).
    pub converged: bool,
    pub iterations: usize,
    /// Norm of the central-difference gradient of the per-frame objective in
    /// transformed coordinates.
    pub gradient_norm: f64,
    /// Names of parameters pinned at a fitting bound.
    pub at_bound: Vec<String>,
}

struct ParamSpace {
    family: SpatialFamily,
    range_lo: f64,
    range_hi: f64,
    d_min: f64,
    d_max: f64,
}

impl ParamSpace {
    fn new(family: SpatialFamily, dist: &DMatrix<f64>) -> Result<Self> {
        let mut d_max = 0.0f64;
        let mut d_min = f64::INFINITY;
        for &d in dist.iter() {
            if d > 0.0 {
                d_max = d_max.max(d);
                d_min = d_min.min(d);
            }
        }
        if d_max == 0.0 {
            return Err(Error::InvalidData(
                "all pairwise distances are zero; the range is unidentifiable".into(),
            ));
        }
        Ok(ParamSpace {
            family,
            range_lo: (0.05 * d_min).max(1e-4 * d_max),
            range_hi: 100.0 * d_max,
            d_min,
            d_max,
        })
    }

    fn dims(&self) -> usize {
        if self.family.has_smoothness() {
            3
        } else {
            2
        }
    }

    /// Transformed coordinates: [ln range, (ln smoothness,) logit nugget weight].
    fn decode(&self, u: &[f64]) -> Option<SpatialAcfModel> {
        let range = u[0].exp();
        if !(self.range_lo..=self.range_hi).contains(&range) {
            return None;
        }
        let smoothness = if self.family.has_smoothness() {
            let s = u[1].exp();
            let hi = match self.family {
                SpatialFamily::Matern => MATERN_FIT_SMOOTHNESS_MAX,
                _ => POWEREXP_FIT_EXPONENT_MAX,
            };
            if !(SMOOTHNESS_FIT_MIN..=hi).contains(&s) {
                return None;
            }
            Some(s)
        } else {
            None
        };
        // saturated logit: beyond +-LOGIT_SATURATION the weight is exactly
        // constant (1.0 at the top, the model's domain boundary), so a
        // boundary optimum is a flat plateau the simplex can settle on
        // instead of an asymptote it chases forever
        let t = u[self.dims() - 1].clamp(-LOGIT_SATURATION, LOGIT_SATURATION);
        let nugget_weight = 1.0 / (1.0 + (-t).exp());
        SpatialAcfModel::new(self.family, range, smoothness, nugget_weight).ok()
    }

    fn encode(&self, model: &SpatialAcfModel) -> Vec<f64> {
        let mut u = vec![model.range().ln()];
        if let Some(s) = model.smoothness() {
            u.push(s.ln());
        }
        let b = model.nugget_weight();
        u.push((b / (1.0 - b)).ln().clamp(-LOGIT_SATURATION, LOGIT_SATURATION));
        u
    }

    fn start_box(&self) -> Vec<(f64, f64)> {
        let mut box_ = vec![((0.5 * self.d_min).max(1.01 * self.range_lo).ln(), (5.0 * self.d_max).ln())];
        if self.family.has_smoothness() {
            let hi = match self.family {
                SpatialFamily::Matern => 5.0f64,
                _ => 1.9f64,
            };
            box_.push((0.2f64.ln(), hi.ln()));
        }
        // logit of 0.5 .. 0.98
        box_.push((0.0, (0.98f64 / 0.02).ln()));
        box_
    }

    fn at_bound(&self, model: &SpatialAcfModel) -> Vec<String> {
        let mut flagged = Vec::new();
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-3 * b.abs().max(1e-12);
        if rel(model.range(), self.range_lo) || rel(model.range(), self.range_hi) {
            flagged.push("range".to_string());
        }
        if let Some(s) = model.smoothness() {
            let hi = match self.family {
                SpatialFamily::Matern => MATERN_FIT_SMOOTHNESS_MAX,
                _ => POWEREXP_FIT_EXPONENT_MAX,
            };
            if rel(s, SMOOTHNESS_FIT_MIN) || rel(s, hi) {
                flagged.push("smoothness".to_string());
            }
        }
        let b = model.nugget_weight();
        if b < 1e-6 || b > 1.0 - 1e-6 {
            flagged.push("nugget_weight".to_string());
        }
        flagged
    }
}

/// Maximizes the spatial pseudo log likelihood by multi-start Nelder-Mead.
/// Non-convergence is reported in the result, not as an error.
pub fn fit_spatial(
    family: SpatialFamily,
    dist: &DMatrix<f64>,
    sample: &SampleSpatialCorrelation,
    starts: usize,
) -> Result<SpatialFitResult> {
    if starts == 0 {
        return Err(Error::InvalidParameter("need at least one start".into()));
    }
    if dist.nrows() != sample.matrix().nrows() {
        return Err(Error::InvalidData(format!(
            "distance matrix is {}x{} but the sample correlation has {} sensors",
            dist.nrows(),
            dist.ncols(),
            sample.matrix().nrows()
        )));
    }
    let space = ParamSpace::new(family, dist)?;
    let mhat = sample.matrix().clone();
    let objective = {
        let space = &space;
        let dist = dist.clone();
        move |u: &[f64]| -> f64 {
            match space.decode(u) {
                Some(model) => logdet_plus_trace(&model, &dist, &mhat)
                    .map_or(f64::INFINITY, |v| 0.5 * v),
                None => f64::INFINITY,
            }
        }
    };

    let box_ = space.start_box();
    let opts = NelderMeadOptions::default();
    let runs: Vec<_> = (0..starts)
        .into_par_iter()
        .map(|k| {
            let x0: Vec<f64> = halton_point(k + 1, box_.len())
                .iter()
                .zip(&box_)
                .map(|(h, (lo, hi))| lo + h * (hi - lo))
                .collect();
            (k, nelder_mead(&objective, &x0, &opts))
        })
        .collect();

    let best = runs
        .into_iter()
        .min_by(|(ia, a), (ib, b)| {
            a.value
                .partial_cmp(&b.value)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ia.cmp(ib))
        })
        .expect("at least one start");
    let (_, mut result) = best;

    // restart once from the winner with a fresh simplex: a degenerately
    // collapsed simplex can satisfy the diameter test slightly short of the
    // minimizer, and re-expanding it there is cheap insurance
    let polish = nelder_mead(&objective, &result.x, &opts);
    if polish.value <= result.value {
        let iterations = result.iterations + polish.iterations;
        let evaluations = result.evaluations + polish.evaluations;
        result = polish;
        result.iterations = iterations;
        result.evaluations = evaluations;
    }

    let model = space.decode(&result.x).ok_or_else(|| {
        Error::Numerical("optimizer failed to find any feasible parameter point".into())
    })?;

    // central-difference gradient of the per-frame objective
    let h = 1e-6;
    let mut grad2 = 0.0;
    for j in 0..result.x.len() {
        let mut up = result.x.clone();
        let mut dn = result.x.clone();
        up[j] += h;
        dn[j] -= h;
        let (fu, fd) = (objective(&up), objective(&dn));
        if fu.is_finite() && fd.is_finite() {
            let g = (fu - fd) / (2.0 * h);
            grad2 += g * g;
        } else {
            grad2 = f64::INFINITY;
        }
    }
    let gradient_norm = grad2.sqrt();

    let loglik = spatial_pseudo_loglik(&model, dist, sample)?;
    Ok(SpatialFitResult {
        converged: result.converged && gradient_norm <= 1e-5,
        at_bound: space.at_bound(&model),
        model,
        loglik,
        iterations: result.iterations,
        gradient_norm,
    })
}

/// Per-parameter estimating-equation residuals
/// `tr{ (R_S - M) d(R_S^{-1})/d u_j }`, with the derivative taken by central
/// differences (step 1e-6) in transformed coordinates. Near zero at an
/// interior optimum.
pub fn estimating_equation_residual(
    model: &SpatialAcfModel,
    dist: &DMatrix<f64>,
    sample: &SampleSpatialCorrelation,
) -> Result<Vec<f64>> {
    let space = ParamSpace::new(model.family(), dist)?;
    let u = space.encode(model);
    let n = dist.nrows();
    let build = |u: &[f64]| -> Result<DMatrix<f64>> {
        let m = space.decode(u).ok_or_else(|| {
            Error::InvalidParameter("parameter step leaves the feasible region".into())
        })?;
        let mut r = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                r[(i, j)] = m.eval(dist[(i, j)]);
            }
        }
        Ok(r)
    };
    let inverse = |r: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let (chol, _) = cholesky_with_jitter(r)?;
        Ok(chol.solve(&DMatrix::identity(n, n)))
    };

    let r0 = build(&u)?;
    let diff = &r0 - sample.matrix();
    let h = 1e-6;
    let mut out = Vec::with_capacity(u.len());
    for j in 0..u.len() {
        let mut up = u.clone();
        let mut dn = u.clone();
        up[j] += h;
        dn[j] -= h;
        let d_inv = (inverse(&build(&up)?)? - inverse(&build(&dn)?)?) / (2.0 * h);
        out.push((&diff * d_inv).trace());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ObservationGrid;
    use approx::assert_relative_eq;

    fn grid(cols: &[Vec<f64>]) -> ObservationGrid {
        let s = cols.len();
        let t = cols[0].len();
        let values = DMatrix::from_fn(t, s, |i, j| cols[j][i]);
        let ids = (0..s).map(|j| format!("s{j}")).collect();
        ObservationGrid::complete(0.0, 10.0, ids, values).unwrap()
    }

    fn flat_trend(frames: usize) -> TrendEstimate {
        TrendEstimate::constant(0.0, frames, 1.0).unwrap()
    }

    #[test]
    fn identical_columns_give_all_ones() {
        let g = grid(&[vec![1.0, -2.0, 0.5], vec![1.0, -2.0, 0.5]]);
        let m = sample_spatial_correlation(&g, &flat_trend(3)).unwrap();
        for v in m.matrix().iter() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-14);
        }
        assert_eq!(m.frames_used(), 3);
        assert!(m.standardized());
    }

    #[test]
    fn orthogonal_columns_give_identity() {
        let g = grid(&[vec![1.0, 1.0, -1.0, -1.0], vec![1.0, -1.0, 1.0, -1.0]]);
        let m = sample_spatial_correlation(&g, &flat_trend(4)).unwrap();
        assert_relative_eq!(m.matrix()[(0, 1)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(m.matrix()[(0, 0)], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn hand_computed_off_diagonal() {
        let g = grid(&[vec![1.0, -1.0, 1.0], vec![1.0, 1.0, -1.0]]);
        let m = sample_spatial_correlation(&g, &flat_trend(3)).unwrap();
        assert_relative_eq!(m.matrix()[(0, 1)], -1.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn zero_variance_column_is_degenerate() {
        let g = grid(&[vec![1.0, -1.0, 1.0], vec![0.0, 0.0, 0.0]]);
        let err = sample_spatial_correlation(&g, &flat_trend(3)).unwrap_err();
        assert!(err.to_string().contains("s1"), "message: {err}");
    }

    #[test]
    fn raw_moments_trace_equals_sensor_count() {
        let g = grid(&[
            vec![0.3, -1.2, 0.8, 2.0, -0.5],
            vec![1.1, 0.2, -0.7, 0.4, 0.9],
            vec![-0.4, 0.6, 1.3, -1.0, 0.2],
        ]);
        let m = sample_spatial_correlation_raw(&g, &flat_trend(5)).unwrap();
        assert!(!m.standardized());
        assert_relative_eq!(m.matrix().trace(), 3.0, max_relative = 1e-14);
    }

    fn test_layout_distances() -> DMatrix<f64> {
        let coords: Vec<[f64; 2]> = vec![
            [0.0, 0.0],
            [4.0, 1.0],
            [8.0, 0.5],
            [2.0, 5.0],
            [6.5, 4.5],
            [10.0, 5.0],
            [1.0, 9.0],
            [5.0, 10.0],
            [9.0, 9.5],
            [12.0, 2.0],
        ];
        crate::grid::build_spatial_distances(&coords).unwrap()
    }

    fn model_as_sample(model: &SpatialAcfModel, dist: &DMatrix<f64>, t_eff: usize) -> SampleSpatialCorrelation {
        let n = dist.nrows();
        let m = DMatrix::from_fn(n, n, |i, j| model.eval(dist[(i, j)]));
        SampleSpatialCorrelation::from_parts(m, t_eff, true).unwrap()
    }

    #[test]
    fn loglik_of_identity_model_and_sample() {
        // tiny range: off-diagonal correlations vanish, R = I
        let model =
            SpatialAcfModel::new(SpatialFamily::Exponential, 1e-6, None, 0.9).unwrap();
        let dist = test_layout_distances();
        let sample = SampleSpatialCorrelation::from_parts(DMatrix::identity(10, 10), 50, true)
            .unwrap();
        let ll = spatial_pseudo_loglik(&model, &dist, &sample).unwrap();
        assert_relative_eq!(ll, -(50.0 / 2.0) * 10.0, max_relative = 1e-12);
    }

    #[test]
    fn objective_worsens_away_from_truth() {
        let dist = test_layout_distances();
        let truth = SpatialAcfModel::new(SpatialFamily::Exponential, 5.0, None, 0.8).unwrap();
        let sample = model_as_sample(&truth, &dist, 100);
        let ll_true = spatial_pseudo_loglik(&truth, &dist, &sample).unwrap();
        for &range in &[1.0, 2.5, 10.0, 20.0] {
            let m = SpatialAcfModel::new(SpatialFamily::Exponential, range, None, 0.8).unwrap();
            let ll = spatial_pseudo_loglik(&m, &dist, &sample).unwrap();
            assert!(ll < ll_true, "range {range}: {ll} !< {ll_true}");
        }
        for &b in &[0.5, 0.7, 0.9, 0.99] {
            let m = SpatialAcfModel::new(SpatialFamily::Exponential, 5.0, None, b).unwrap();
            let ll = spatial_pseudo_loglik(&m, &dist, &sample).unwrap();
            assert!(ll <= ll_true + 1e-9, "nugget weight {b}");
        }
    }

    #[test]
    fn fit_recovers_self_consistent_exponential() {
        let dist = test_layout_distances();
        let truth = SpatialAcfModel::new(SpatialFamily::Exponential, 5.0, None, 0.8).unwrap();
        let sample = model_as_sample(&truth, &dist, 500);
        let fit = fit_spatial(SpatialFamily::Exponential, &dist, &sample, 5).unwrap();
        assert!(fit.converged, "gradient {}", fit.gradient_norm);
        assert_relative_eq!(fit.model.range(), 5.0, max_relative = 1e-4);
        assert_relative_eq!(fit.model.nugget_weight(), 0.8, max_relative = 1e-4);
        assert!(fit.gradient_norm <= 1e-5);
        assert!(fit.at_bound.is_empty(), "{:?}", fit.at_bound);

        let resid = estimating_equation_residual(&fit.model, &dist, &sample).unwrap();
        for r in &resid {
            assert!(r.abs() <= 1e-4, "estimating equation residual {r}");
        }
    }

    #[test]
    fn fit_recovers_self_consistent_matern() {
        let dist = test_layout_distances();
        let truth =
            SpatialAcfModel::new(SpatialFamily::Matern, 6.0, Some(1.2), 0.85).unwrap();
        let sample = model_as_sample(&truth, &dist, 500);
        let fit = fit_spatial(SpatialFamily::Matern, &dist, &sample, 5).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.model.range(), 6.0, max_relative = 1e-3);
        assert_relative_eq!(fit.model.smoothness().unwrap(), 1.2, max_relative = 1e-3);
        assert_relative_eq!(fit.model.nugget_weight(), 0.85, max_relative = 1e-3);
    }

    #[test]
    fn estimating_equation_zero_at_exact_match() {
        let dist = test_layout_distances();
        let truth = SpatialAcfModel::new(SpatialFamily::Exponential, 4.0, None, 0.75).unwrap();
        let sample = model_as_sample(&truth, &dist, 100);
        let resid = estimating_equation_residual(&truth, &dist, &sample).unwrap();
        for r in &resid {
            assert!(r.abs() < 1e-8, "residual {r} not ~0 at the exact optimum");
        }
        // and clearly nonzero away from it
        let off = SpatialAcfModel::new(SpatialFamily::Exponential, 8.0, None, 0.75).unwrap();
        let resid_off = estimating_equation_residual(&off, &dist, &sample).unwrap();
        assert!(resid_off.iter().any(|r| r.abs() > 1e-3));
    }

    #[test]
    fn fit_is_permutation_invariant() {
        let dist = test_layout_distances();
        let truth = SpatialAcfModel::new(SpatialFamily::Exponential, 5.0, None, 0.8).unwrap();
        let sample = model_as_sample(&truth, &dist, 200);

        let n = dist.nrows();
        let perm: Vec<usize> = (0..n).rev().collect();
        let dist_p = DMatrix::from_fn(n, n, |i, j| dist[(perm[i], perm[j])]);
        let m_p = DMatrix::from_fn(n, n, |i, j| sample.matrix()[(perm[i], perm[j])]);
        let sample_p = SampleSpatialCorrelation::from_parts(m_p, 200, true).unwrap();

        let fit = fit_spatial(SpatialFamily::Exponential, &dist, &sample, 3).unwrap();
        let fit_p = fit_spatial(SpatialFamily::Exponential, &dist_p, &sample_p, 3).unwrap();
        assert_relative_eq!(fit.model.range(), fit_p.model.range(), max_relative = 1e-6);
        assert_relative_eq!(
            fit.model.nugget_weight(),
            fit_p.model.nugget_weight(),
            max_relative = 1e-6
        );
    }
}
