//! Spatial and temporal autocorrelation families.
//!
//! Spatial correlation at distance `d` is `1` when `d = 0` and
//! `beta_S * rho(d / lambda)` otherwise, where `rho` is one of four families
//! (exponential, Gaussian, power exponential, Matern) and `1 - beta_S` is the
//! nugget: the discontinuous drop at the origin that absorbs measurement
//! noise. Temporal correlation follows the same convention with AR(1) or
//! MA(1) base families.
//!
//! Matern uses `2^{1-a}/Gamma(a) (d/l)^a K_a(d/l)`, so `a = 1/2` reproduces
//! the exponential family; power exponential `exp(-(d/l)^b)` reproduces the
//! Gaussian at `b = 2`.

use std::fmt;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::bessel::{bessel_k_scaled, ln_gamma};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialFamily {
    Exponential,
    Gaussian,
    PowerExponential,
    Matern,
}

impl SpatialFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SpatialFamily::Exponential => "exponential",
            SpatialFamily::Gaussian => "gaussian",
            SpatialFamily::PowerExponential => "powerexp",
            SpatialFamily::Matern => "matern",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "exponential" | "exp" => Ok(SpatialFamily::Exponential),
            "gaussian" | "gauss" => Ok(SpatialFamily::Gaussian),
            "powerexp" => Ok(SpatialFamily::PowerExponential),
            "matern" => Ok(SpatialFamily::Matern),
            other => Err(Error::InvalidParameter(format!(
                "unknown spatial family {other:?} (expected exp, gauss, powerexp or matern)"
            ))),
        }
    }

    pub fn has_smoothness(&self) -> bool {
        matches!(self, SpatialFamily::PowerExponential | SpatialFamily::Matern)
    }
}

impl fmt::Display for SpatialFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Matern smoothness above this is rejected outright; the Bessel kernel is
/// only validated up to order 35. Fitting applies the tighter bound 30.
pub const MATERN_SMOOTHNESS_MAX: f64 = 35.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAcfModel {
    family: SpatialFamily,
    range: f64,
    smoothness: Option<f64>,
    nugget_weight: f64,
}

impl SpatialAcfModel {
    pub fn new(
        family: SpatialFamily,
        range: f64,
        smoothness: Option<f64>,
        nugget_weight: f64,
    ) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "range must be positive and finite, got {range}"
            )));
        }
        if !(nugget_weight > 0.0 && nugget_weight <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "nugget weight must lie in (0, 1], got {nugget_weight}"
            )));
        }
        match (family.has_smoothness(), smoothness) {
            (true, None) => {
                return Err(Error::InvalidParameter(format!(
                    "family {family} requires a smoothness parameter"
                )))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidParameter(format!(
                    "family {family} takes no smoothness parameter"
                )))
            }
            (true, Some(s)) => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "smoothness must be positive and finite, got {s}"
                    )));
                }
                if family == SpatialFamily::Matern && s > MATERN_SMOOTHNESS_MAX {
                    return Err(Error::InvalidParameter(format!(
                        "matern smoothness must not exceed {MATERN_SMOOTHNESS_MAX}, got {s}"
                    )));
                }
            }
            (false, None) => {}
        }
        Ok(SpatialAcfModel { family, range, smoothness, nugget_weight })
    }

    pub fn family(&self) -> SpatialFamily {
        self.family
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }

    pub fn nugget_weight(&self) -> f64 {
        self.nugget_weight
    }

    /// Correlation at distance `d >= 0`. Exactly 1 at `d = 0`; the nugget
    /// makes the limit from above `beta_S`, not 1.
    pub fn eval(&self, d: f64) -> f64 {
        assert!(d >= 0.0 && d.is_finite(), "distance must be nonnegative and finite");
        if d == 0.0 {
            return 1.0;
        }
        self.nugget_weight * self.family_cor(d / self.range)
    }

    fn family_cor(&self, t: f64) -> f64 {
        match self.family {
            SpatialFamily::Exponential => (-t).exp(),
            SpatialFamily::Gaussian => (-t * t).exp(),
            SpatialFamily::PowerExponential => (-t.powf(self.smoothness.unwrap())).exp(),
            SpatialFamily::Matern => {
                let a = self.smoothness.unwrap();
                // K_a(t) ~ Gamma(a)/2 (2/t)^a for small t; when that exceeds
                // the f64 range the deviation of the correlation from 1 has
                // underflowed, so short-circuit instead of evaluating.
                if ln_gamma(a) + a * (2.0 / t).ln() > 700.0 {
                    return 1.0;
                }
                let k_scaled = bessel_k_scaled(a, t)
                    .expect("Bessel order and argument validated at model construction");
                let ln_pre = (1.0 - a) * std::f64::consts::LN_2 - ln_gamma(a) + a * t.ln() - t;
                ln_pre.exp() * k_scaled
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalKind {
    Ar1,
    Ma1,
}

impl TemporalKind {
    pub fn name(&self) -> &'static str {
        match self {
            TemporalKind::Ar1 => "ar1",
            TemporalKind::Ma1 => "ma1",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "ar1" => Ok(TemporalKind::Ar1),
            "ma1" => Ok(TemporalKind::Ma1),
            other => Err(Error::InvalidParameter(format!(
                "unknown temporal family {other:?} (expected ar1 or ma1)"
            ))),
        }
    }
}

impl fmt::Display for TemporalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalAcfModel {
    kind: TemporalKind,
    coefficient: f64,
    nugget_weight: f64,
}

impl TemporalAcfModel {
    pub fn new(kind: TemporalKind, coefficient: f64, nugget_weight: f64) -> Result<Self> {
        let ok = match kind {
            TemporalKind::Ar1 => coefficient.abs() < 1.0,
            TemporalKind::Ma1 => coefficient.abs() < 0.5,
        };
        if !ok || !coefficient.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{} coefficient {coefficient} outside the stationary/valid region",
                kind
            )));
        }
        if !(nugget_weight > 0.0 && nugget_weight <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "nugget weight must lie in (0, 1], got {nugget_weight}"
            )));
        }
        Ok(TemporalAcfModel { kind, coefficient, nugget_weight })
    }

    pub fn kind(&self) -> TemporalKind {
        self.kind
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn nugget_weight(&self) -> f64 {
        self.nugget_weight
    }

    /// Correlation at a signed frame lag.
    pub fn eval(&self, lag: i64) -> f64 {
        if lag == 0 {
            return 1.0;
        }
        let base = match self.kind {
            TemporalKind::Ar1 => self.coefficient.powi(lag.unsigned_abs().min(i32::MAX as u64) as i32),
            TemporalKind::Ma1 => {
                if lag.abs() == 1 {
                    self.coefficient
                } else {
                    0.0
                }
            }
        };
        self.nugget_weight * base
    }
}

/// Cholesky factorization with the crate-wide jitter policy: on failure add
/// `1e-10` to the diagonal and retry, up to three times. Returns the factor
/// and the total jitter added. Every solve against a correlation matrix goes
/// through here so repeated factorizations are bit-reproducible.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    const JITTER: f64 = 1e-10;
    let mut attempt = m.clone();
    let mut added = 0.0;
    for retry in 0..=3 {
        if let Some(ch) = Cholesky::new(attempt.clone()) {
            return Ok((ch, added));
        }
        if retry < 3 {
            for i in 0..attempt.nrows() {
                attempt[(i, i)] += JITTER;
            }
            added += JITTER;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    Err(Error::Numerical(format!(
        "matrix is not positive definite after 3 jitter retries (smallest eigenvalue estimate {min:e})"
    )))
}

/// Applies the spatial model entry-wise to a distance matrix and verifies the
/// result is positive definite. If the exact matrix is singular (duplicate
/// sensors), the returned matrix carries the diagonal jitter that made the
/// factorization succeed.
pub fn build_correlation_matrix(
    model: &SpatialAcfModel,
    dist: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if dist.nrows() != dist.ncols() {
        return Err(Error::InvalidData(format!(
            "distance matrix must be square, got {}x{}",
            dist.nrows(),
            dist.ncols()
        )));
    }
    let n = dist.nrows();
    let mut r = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let d = dist[(i, j)];
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidData(format!(
                    "distance ({i}, {j}) = {d} is not a nonnegative finite number"
                )));
            }
            r[(i, j)] = model.eval(d);
        }
    }
    let (_, jitter) = cholesky_with_jitter(&r)?;
    if jitter > 0.0 {
        for i in 0..n {
            r[(i, i)] += jitter;
        }
    }
    Ok(r)
}

/// Dense temporal correlation matrix over `n` consecutive frames.
pub fn temporal_correlation_matrix(model: &TemporalAcfModel, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| model.eval(i as i64 - j as i64))
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Shared by the model files and the CLI config format.
pub(crate) fn parse_kv(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(path, format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn kv_get<'a>(
    kv: &'a [(String, String)],
    key: &str,
    path: &Path,
) -> Result<&'a str> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::parse(path, format!("missing key {key:?}")))
}

pub(crate) fn kv_parse_f64(kv: &[(String, String)], key: &str, path: &Path) -> Result<f64> {
    let raw = kv_get(kv, key, path)?;
    raw.parse::<f64>()
        .map_err(|_| Error::parse(path, format!("key {key:?}: {raw:?} is not a number")))
}

impl SpatialAcfModel {
    /// Serializes to the model-file format. The nugget is stored as
    /// `1 - beta_S` (the height of the drop at the origin).
    pub fn to_kv(&self) -> String {
        let mut s = format!("family = {}\nrange = {}\n", self.family, self.range);
        if let Some(sm) = self.smoothness {
            s.push_str(&format!("smoothness = {sm}\n"));
        }
        s.push_str(&format!("nugget = {}\n", 1.0 - self.nugget_weight));
        s
    }

    pub fn from_kv(text: &str, path: &Path) -> Result<Self> {
        let kv = parse_kv(text, path)?;
        let family = SpatialFamily::parse(kv_get(&kv, "family", path)?)?;
        let range = kv_parse_f64(&kv, "range", path)?;
        let smoothness = if family.has_smoothness() {
            Some(kv_parse_f64(&kv, "smoothness", path)?)
        } else {
            None
        };
        let nugget = kv_parse_f64(&kv, "nugget", path)?;
        SpatialAcfModel::new(family, range, smoothness, 1.0 - nugget)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text, path)
    }
}

impl TemporalAcfModel {
    pub fn to_kv(&self) -> String {
        format!(
            "kind = {}\ncoefficient = {}\nnugget = {}\n",
            self.kind,
            self.coefficient,
            1.0 - self.nugget_weight
        )
    }

    pub fn from_kv(text: &str, path: &Path) -> Result<Self> {
        let kv = parse_kv(text, path)?;
        let kind = TemporalKind::parse(kv_get(&kv, "kind", path)?)?;
        let coefficient = kv_parse_f64(&kv, "coefficient", path)?;
        let nugget = kv_parse_f64(&kv, "nugget", path)?;
        TemporalAcfModel::new(kind, coefficient, 1.0 - nugget)
    }
}
