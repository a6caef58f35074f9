//! Lazy Kronecker product of the spatial and temporal correlation factors.
//!
//! The joint correlation over `S` sensors and `T` frames is `R_S (x) R_T`,
//! an `ST x ST` matrix that is never needed explicitly: with observations
//! arranged as a `T x S` matrix `X` and vectorized column by column
//! (entry `(t, s)` at position `s*T + t`),
//!
//! `(R_S (x) R_T) vec(X) = vec(R_T X R_S^T)`.
//!
//! Solves factor the same way through the two small Cholesky decompositions.
//! Materialization exists for test oracles only and is capped.

use nalgebra::{DMatrix, DVector};

use crate::acf::cholesky_with_jitter;
use crate::error::{Error, Result};

/// Largest `S * T` for which a dense joint matrix may be materialized.
pub const MATERIALIZE_CAP: usize = 4096;

#[derive(Debug, Clone)]
pub struct KroneckerCorrelation {
    r_s: DMatrix<f64>,
    r_t: DMatrix<f64>,
}

impl KroneckerCorrelation {
    pub fn new(r_s: DMatrix<f64>, r_t: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("spatial", &r_s), ("temporal", &r_t)] {
            if m.nrows() != m.ncols() || m.nrows() == 0 {
                return Err(Error::InvalidData(format!(
                    "{name} factor must be square and nonempty, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let asym = (m - m.transpose()).abs().max();
            if asym > 1e-12 {
                return Err(Error::InvalidData(format!(
                    "{name} factor is not symmetric (max deviation {asym:e})"
                )));
            }
        }
        Ok(KroneckerCorrelation { r_s, r_t })
    }

    pub fn n_sensors(&self) -> usize {
        self.r_s.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.r_t.nrows()
    }

    pub fn dim(&self) -> usize {
        self.n_sensors() * self.n_frames()
    }

    pub fn spatial(&self) -> &DMatrix<f64> {
        &self.r_s
    }

    pub fn temporal(&self) -> &DMatrix<f64> {
        &self.r_t
    }

    /// `(R_S (x) R_T) v` without forming the product matrix.
    pub fn matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.unstack(v)?;
        let y = &self.r_t * x * self.r_s.transpose();
        Ok(DVector::from_column_slice(y.as_slice()))
    }

    /// `(R_S (x) R_T)^{-1} v` via the factor Cholesky decompositions.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.unstack(v)?;
        let (chol_t, _) = cholesky_with_jitter(&self.r_t)?;
        let (chol_s, _) = cholesky_with_jitter(&self.r_s)?;
        // R_T^{-1} X R_S^{-1}; both factors symmetric
        let mut y = chol_t.solve(&x);
        y = chol_s.solve(&y.transpose()).transpose();
        Ok(DVector::from_column_slice(y.as_slice()))
    }

    /// Dense `ST x ST` matrix, for small test instances only.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        if self.dim() > MATERIALIZE_CAP {
            return Err(Error::SizeGuard(format!(
                "refusing to materialize a {dim}x{dim} joint correlation matrix \
                 ({s} sensors x {t} frames exceeds the cap of {cap} points)",
                dim = self.dim(),
                s = self.n_sensors(),
                t = self.n_frames(),
                cap = MATERIALIZE_CAP
            )));
        }
        Ok(self.r_s.kronecker(&self.r_t))
    }

    fn unstack(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        if v.len() != self.dim() {
            return Err(Error::InvalidData(format!(
                "vector length {} does not match {} sensors x {} frames",
                v.len(),
                self.n_sensors(),
                self.n_frames()
            )));
        }
        Ok(DMatrix::from_column_slice(self.n_frames(), self.n_sensors(), v.as_slice()))
    }
}
