//! Python bindings for the sepkrig library: the layout/grid/model types plus
//! the pipeline operations (simulate, fit, predict, select, bootstrap, and
//! the distributed-runtime check). Values cross the boundary as plain lists
//! and dicts; missing grid cells are `None`.
//!
//! Build `libsepkrig_py.so` with `cargo build -p sepkrig-py`, rename it to
//! `sepkrig_py.so` somewhere on `sys.path`, and `import sepkrig_py` —
//! `python/smoke_test.py` at the repository root does exactly that.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sepkrig::acf::{SpatialAcfModel, SpatialFamily};
use sepkrig::bootstrap::{bootstrap_standard_errors, simulate_dataset};
use sepkrig::grid::{ObservationGrid, SensorLayout};
use sepkrig::kriging::{
    predict_mean, predict_variance, FittedField, PredictionTarget, TemporalModel,
};
use sepkrig::runtime::{run_distributed, RuntimeMode};
use sepkrig::selection::{forward_select, Metric};
use sepkrig::spatial_fit::{fit_spatial as fit_spatial_rs, sample_spatial_correlation};
use sepkrig::temporal_fit::{fit_seasonal_ar, SeasonalArModel};
use sepkrig::trend::{moving_average_trend, TrendEstimate};

fn to_py_err(e: sepkrig::Error) -> PyErr {
    use sepkrig::Error as E;
    match &e {
        E::Io { .. } | E::Csv { .. } => PyIOError::new_err(e.to_string()),
        E::Numerical(_) | E::SizeGuard(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPyResult<T> {
    fn into_py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for sepkrig::Result<T> {
    fn into_py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

/// Day-long default window, mirroring the command-line default.
fn trend_for(grid: &ObservationGrid, window: Option<usize>) -> PyResult<TrendEstimate> {
    let w = window.unwrap_or_else(|| (86400.0 / grid.step()).round().max(1.0) as usize);
    moving_average_trend(grid, w).into_py()
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// Sensor positions on the plane, with pairwise distances.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Layout {
    inner: SensorLayout,
}

#[pymethods]
impl Layout {
    #[new]
    fn new(sensor_ids: Vec<String>, coords: Vec<(f64, f64)>) -> PyResult<Self> {
        let coords = coords.into_iter().map(|(x, y)| [x, y]).collect();
        Ok(Layout { inner: SensorLayout::new(sensor_ids, coords).into_py()? })
    }

    /// Loads a `sensor_id,x,y` CSV.
    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Layout { inner: SensorLayout::read_csv(&path).into_py()? })
    }

    fn sensor_ids(&self) -> Vec<String> {
        self.inner.sensor_ids().to_vec()
    }

    fn coords(&self) -> Vec<(f64, f64)> {
        self.inner.coords().iter().map(|c| (c[0], c[1])).collect()
    }

    fn distances(&self) -> Vec<Vec<f64>> {
        matrix_rows(self.inner.dist())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Layout({} sensors)", self.inner.len())
    }
}

/// Readings on a regular frame grid; missing cells are `None`.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Grid {
    inner: ObservationGrid,
}

#[pymethods]
impl Grid {
    /// Builds a grid from per-frame rows; `None` marks a missing cell.
    #[new]
    fn new(
        start_time: f64,
        step: f64,
        sensor_ids: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> PyResult<Self> {
        let n_frames = rows.len();
        let n_sensors = sensor_ids.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_sensors {
                return Err(PyValueError::new_err(format!(
                    "row {i} has {} cells for {n_sensors} sensors",
                    row.len()
                )));
            }
        }
        let values = nalgebra::DMatrix::from_fn(n_frames, n_sensors, |i, j| {
            rows[i][j].unwrap_or(f64::NAN)
        });
        let missing =
            nalgebra::DMatrix::from_fn(n_frames, n_sensors, |i, j| rows[i][j].is_none());
        Ok(Grid {
            inner: ObservationGrid::new(start_time, step, sensor_ids, values, missing)
                .into_py()?,
        })
    }

    /// Loads a grid CSV (first column timestamp, one column per sensor,
    /// empty cell = missing).
    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Grid { inner: ObservationGrid::read_csv(&path).into_py()? })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.inner.to_csv_string())
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))
    }

    /// Carries the last observation forward into every gap.
    fn impute(&self) -> PyResult<Grid> {
        Ok(Grid { inner: self.inner.locf_impute().into_py()? })
    }

    fn n_frames(&self) -> usize {
        self.inner.n_frames()
    }

    fn n_sensors(&self) -> usize {
        self.inner.n_sensors()
    }

    fn step(&self) -> f64 {
        self.inner.step()
    }

    fn start_time(&self) -> f64 {
        self.inner.start_time()
    }

    fn sensor_ids(&self) -> Vec<String> {
        self.inner.sensor_ids().to_vec()
    }

    fn fully_observed(&self) -> bool {
        self.inner.is_fully_observed()
    }

    /// Rows of values, `None` where the cell is missing.
    fn values(&self) -> Vec<Vec<Option<f64>>> {
        let v = self.inner.values();
        let m = self.inner.missing();
        (0..v.nrows())
            .map(|i| {
                (0..v.ncols())
                    .map(|j| if m[(i, j)] { None } else { Some(v[(i, j)]) })
                    .collect()
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid({} frames x {} sensors, step {}s)",
            self.inner.n_frames(),
            self.inner.n_sensors(),
            self.inner.step()
        )
    }
}

/// Stationary isotropic spatial correlation with a nugget.
#[pyclass(frozen, skip_from_py_object, name = "SpatialModel")]
#[derive(Clone)]
struct PySpatialModel {
    inner: SpatialAcfModel,
}

#[pymethods]
impl PySpatialModel {
    /// `family` is one of exp, gauss, powerexp, matern; `nugget` is the
    /// correlation lost at zero-plus distance (1 - continuous weight).
    #[new]
    #[pyo3(signature = (family, range, smoothness=None, nugget=0.0))]
    fn new(family: &str, range: f64, smoothness: Option<f64>, nugget: f64) -> PyResult<Self> {
        let family = SpatialFamily::parse(family).into_py()?;
        Ok(PySpatialModel {
            inner: SpatialAcfModel::new(family, range, smoothness, 1.0 - nugget).into_py()?,
        })
    }

    #[staticmethod]
    fn read_file(path: PathBuf) -> PyResult<Self> {
        Ok(PySpatialModel { inner: SpatialAcfModel::read_file(&path).into_py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.inner.to_kv())
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))
    }

    /// Correlation at distance `d` (exactly 1 at d = 0: re-observation).
    fn eval(&self, d: f64) -> f64 {
        self.inner.eval(d)
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family().name().to_string()
    }

    #[getter]
    fn range(&self) -> f64 {
        self.inner.range()
    }

    #[getter]
    fn smoothness(&self) -> Option<f64> {
        self.inner.smoothness()
    }

    #[getter]
    fn nugget(&self) -> f64 {
        1.0 - self.inner.nugget_weight()
    }

    fn __repr__(&self) -> String {
        match self.inner.smoothness() {
            Some(s) => format!(
                "SpatialModel(family='{}', range={}, smoothness={}, nugget={})",
                self.inner.family().name(),
                self.inner.range(),
                s,
                1.0 - self.inner.nugget_weight()
            ),
            None => format!(
                "SpatialModel(family='{}', range={}, nugget={})",
                self.inner.family().name(),
                self.inner.range(),
                1.0 - self.inner.nugget_weight()
            ),
        }
    }
}

/// Temporal dependence of the residual field: either a closed-form ACF
/// (AR(1) or MA(1) shape with a nugget) or a multiplicative seasonal AR.
#[pyclass(frozen, skip_from_py_object, name = "TemporalModel")]
#[derive(Clone)]
struct PyTemporalModel {
    inner: TemporalModel,
}

#[pymethods]
impl PyTemporalModel {
    #[staticmethod]
    #[pyo3(signature = (coefficient, nugget=0.0))]
    fn ar1(coefficient: f64, nugget: f64) -> PyResult<Self> {
        use sepkrig::acf::{TemporalAcfModel, TemporalKind};
        Ok(PyTemporalModel {
            inner: TemporalModel::Acf(
                TemporalAcfModel::new(TemporalKind::Ar1, coefficient, 1.0 - nugget).into_py()?,
            ),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (coefficient, nugget=0.0))]
    fn ma1(coefficient: f64, nugget: f64) -> PyResult<Self> {
        use sepkrig::acf::{TemporalAcfModel, TemporalKind};
        Ok(PyTemporalModel {
            inner: TemporalModel::Acf(
                TemporalAcfModel::new(TemporalKind::Ma1, coefficient, 1.0 - nugget).into_py()?,
            ),
        })
    }

    /// Multiplicative seasonal AR: one coefficient per structural lag.
    #[staticmethod]
    fn seasonal_ar(lags: Vec<usize>, coeffs: Vec<f64>, innovation_sd: f64) -> PyResult<Self> {
        Ok(PyTemporalModel {
            inner: TemporalModel::SeasonalAr(
                SeasonalArModel::new(lags, coeffs, innovation_sd).into_py()?,
            ),
        })
    }

    #[staticmethod]
    fn read_file(path: PathBuf) -> PyResult<Self> {
        Ok(PyTemporalModel { inner: TemporalModel::read_file(&path).into_py()? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.inner.to_kv())
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))
    }

    fn __repr__(&self) -> String {
        format!("TemporalModel({})", self.inner.to_kv().trim().replace('\n', ", "))
    }
}

/// Simulates a complete grid from the given models around a constant trend.
/// Identical seeds give bit-identical grids.
#[pyfunction]
#[pyo3(signature = (layout, spatial, temporal, frames, seed, level=20.0, sigma=1.0, step=60.0, start=0.0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    layout: &Layout,
    spatial: &PySpatialModel,
    temporal: &PyTemporalModel,
    frames: usize,
    seed: u64,
    level: f64,
    sigma: f64,
    step: f64,
    start: f64,
) -> PyResult<Grid> {
    let field = FittedField {
        trend: TrendEstimate::constant(level, frames, sigma).into_py()?,
        spatial: spatial.inner.clone(),
        temporal: temporal.inner.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Grid {
        inner: simulate_dataset(&field, &layout.inner, frames, start, step, &mut rng)
            .into_py()?,
    })
}

/// Fits a spatial family to the detrended grid. Returns the model and a fit
/// report dict (loglik, gradient_norm, converged, iterations, at_bound).
#[pyfunction]
#[pyo3(signature = (grid, layout, family, window=None, starts=8))]
fn fit_spatial<'py>(
    py: Python<'py>,
    grid: &Grid,
    layout: &Layout,
    family: &str,
    window: Option<usize>,
    starts: usize,
) -> PyResult<(PySpatialModel, Bound<'py, PyDict>)> {
    let family = SpatialFamily::parse(family).into_py()?;
    grid.inner.check_layout(&layout.inner).into_py()?;
    let trend = trend_for(&grid.inner, window)?;
    let sample = sample_spatial_correlation(&grid.inner, &trend).into_py()?;
    let fit = fit_spatial_rs(family, layout.inner.dist(), &sample, starts).into_py()?;
    let report = PyDict::new(py);
    report.set_item("loglik", fit.loglik)?;
    report.set_item("gradient_norm", fit.gradient_norm)?;
    report.set_item("converged", fit.converged)?;
    report.set_item("iterations", fit.iterations)?;
    report.set_item("at_bound", fit.at_bound.clone())?;
    report.set_item("frames_used", sample.frames_used())?;
    Ok((PySpatialModel { inner: fit.model }, report))
}

/// Fits the multiplicative seasonal AR at the given structural lags (in
/// frames). Returns the model and a fit report dict.
#[pyfunction]
#[pyo3(signature = (grid, lags, window=None))]
fn fit_temporal<'py>(
    py: Python<'py>,
    grid: &Grid,
    lags: Vec<usize>,
    window: Option<usize>,
) -> PyResult<(PyTemporalModel, Bound<'py, PyDict>)> {
    let trend = trend_for(&grid.inner, window)?;
    let residuals = trend.residuals(&grid.inner).into_py()?;
    let fit = fit_seasonal_ar(&residuals, &lags).into_py()?;
    let report = PyDict::new(py);
    report.set_item("converged", fit.converged)?;
    report.set_item("sweeps", fit.sweeps)?;
    report.set_item("frames_used", residuals.nrows())?;
    Ok((PyTemporalModel { inner: TemporalModel::SeasonalAr(fit.model) }, report))
}

/// Predicts at target `(x, y)` points. Horizon 0 interpolates the last
/// observed frame; horizon k forecasts k frames ahead. Returns
/// `(mean, variance)` as row-per-frame lists; `variance` is `None` when the
/// temporal model only supports one-step variances and more were requested.
#[pyfunction]
#[pyo3(signature = (grid, layout, spatial, temporal, targets, horizon=0, window=None))]
#[allow(clippy::too_many_arguments)]
fn predict(
    grid: &Grid,
    layout: &Layout,
    spatial: &PySpatialModel,
    temporal: &PyTemporalModel,
    targets: Vec<(f64, f64)>,
    horizon: usize,
    window: Option<usize>,
) -> PyResult<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)> {
    grid.inner.check_layout(&layout.inner).into_py()?;
    let field = FittedField {
        trend: trend_for(&grid.inner, window)?,
        spatial: spatial.inner.clone(),
        temporal: temporal.inner.clone(),
    };
    let locations: Vec<[f64; 2]> = targets.into_iter().map(|(x, y)| [x, y]).collect();
    let target = PredictionTarget::new(locations, horizon).into_py()?;
    let result = predict_mean(&field, &grid.inner, &layout.inner, &target).into_py()?;
    let variance = match predict_variance(&field, &grid.inner, &layout.inner, &target) {
        Ok(v) => Some(matrix_rows(&v)),
        Err(sepkrig::Error::Unsupported(_)) => None,
        Err(e) => return Err(to_py_err(e)),
    };
    Ok((matrix_rows(&result.mean), variance))
}

/// Runs the distributed split (per-sensor forecasters, central assembler)
/// with the shared temporal model and returns the assembled mean rows; for a
/// shared model this is bit-identical to `predict`'s forecast-first order.
#[pyfunction]
#[pyo3(signature = (grid, layout, spatial, temporal, targets, horizon, window=None))]
#[allow(clippy::too_many_arguments)]
fn run_shared(
    grid: &Grid,
    layout: &Layout,
    spatial: &PySpatialModel,
    temporal: &PyTemporalModel,
    targets: Vec<(f64, f64)>,
    horizon: usize,
    window: Option<usize>,
) -> PyResult<Vec<Vec<f64>>> {
    grid.inner.check_layout(&layout.inner).into_py()?;
    let field = FittedField {
        trend: trend_for(&grid.inner, window)?,
        spatial: spatial.inner.clone(),
        temporal: temporal.inner.clone(),
    };
    let locations: Vec<[f64; 2]> = targets.into_iter().map(|(x, y)| [x, y]).collect();
    let target = PredictionTarget::new(locations, horizon).into_py()?;
    let run =
        run_distributed(&field, &grid.inner, &layout.inner, &target, &RuntimeMode::Shared, None)
            .into_py()?;
    Ok(matrix_rows(&run.mean))
}

/// Greedy forward sensor selection under `metric` ("mae" or "p95"). Returns
/// one `(added_id, active_ids, score)` tuple per step.
#[pyfunction]
#[pyo3(signature = (grid, layout, spatial, metric="mae", max_k=None, window=None))]
fn select_sensors(
    grid: &Grid,
    layout: &Layout,
    spatial: &PySpatialModel,
    metric: &str,
    max_k: Option<usize>,
    window: Option<usize>,
) -> PyResult<Vec<(String, Vec<String>, f64)>> {
    let metric = Metric::parse(metric).into_py()?;
    grid.inner.check_layout(&layout.inner).into_py()?;
    let max_k = max_k.unwrap_or_else(|| layout.inner.len().saturating_sub(1));
    let field = FittedField {
        trend: trend_for(&grid.inner, window)?,
        spatial: spatial.inner.clone(),
        // selection interpolates within frames; the temporal model is unused
        temporal: PyTemporalModel::ar1(0.0, 0.0)?.inner,
    };
    let trace = forward_select(&grid.inner, &layout.inner, &field, metric, max_k).into_py()?;
    Ok(trace
        .steps
        .into_iter()
        .map(|s| (s.added, s.active, s.score))
        .collect())
}

/// Parametric-bootstrap standard errors for the fitted parameters. Returns a
/// dict with `params` (list of per-parameter dicts), `replicates`,
/// `failures`, and `unreliable`.
#[pyfunction]
#[pyo3(signature = (grid, layout, spatial, temporal, replicates, seed, window=None, frames=None))]
#[allow(clippy::too_many_arguments)]
fn bootstrap_errors<'py>(
    py: Python<'py>,
    grid: &Grid,
    layout: &Layout,
    spatial: &PySpatialModel,
    temporal: &PyTemporalModel,
    replicates: usize,
    seed: u64,
    window: Option<usize>,
    frames: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    grid.inner.check_layout(&layout.inner).into_py()?;
    let field = FittedField {
        trend: trend_for(&grid.inner, window)?,
        spatial: spatial.inner.clone(),
        temporal: temporal.inner.clone(),
    };
    let frames = frames.unwrap_or_else(|| grid.inner.n_frames());
    let report =
        bootstrap_standard_errors(&field, &layout.inner, frames, replicates, seed).into_py()?;
    let out = PyDict::new(py);
    let params: Vec<Bound<'py, PyDict>> = report
        .params
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("name", &p.name)?;
            d.set_item("estimate", p.estimate)?;
            d.set_item("std_err", p.std_err)?;
            d.set_item("q025", p.q025)?;
            d.set_item("q975", p.q975)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    out.set_item("params", params)?;
    out.set_item("replicates", report.replicates)?;
    out.set_item("failures", report.failures)?;
    out.set_item("unreliable", report.unreliable)?;
    Ok(out)
}

#[pymodule]
fn sepkrig_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Layout>()?;
    m.add_class::<Grid>()?;
    m.add_class::<PySpatialModel>()?;
    m.add_class::<PyTemporalModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_spatial, m)?)?;
    m.add_function(wrap_pyfunction!(fit_temporal, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(run_shared, m)?)?;
    m.add_function(wrap_pyfunction!(select_sensors, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_errors, m)?)?;
    Ok(())
}
