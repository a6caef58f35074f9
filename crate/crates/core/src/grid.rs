//! Sensor layouts and regular observation grids.
//!
//! A [`SensorLayout`] holds sensor identifiers, planar coordinates and the
//! pairwise distance matrix (Euclidean by default, individual pairs may be
//! overridden, e.g. to account for walls). An [`ObservationGrid`] is the
//! `T x S` matrix of readings on a regular time grid, with an explicit
//! missing mask; raw readings are projected onto the grid by binning and
//! gaps are filled by last-observation-carried-forward.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One raw reading as it appears in an input file.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub sensor_id: String,
    pub timestamp: f64,
    pub value: f64,
}

/// Euclidean distance matrix for planar coordinates.
pub fn build_spatial_distances(coords: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    for (i, c) in coords.iter().enumerate() {
        if !(c[0].is_finite() && c[1].is_finite()) {
            return Err(Error::InvalidData(format!(
                "coordinate {i} is not finite: ({}, {})",
                c[0], c[1]
            )));
        }
    }
    let n = coords.len();
    let mut dist = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let d = dx.hypot(dy);
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    Ok(dist)
}

#[derive(Debug, Clone)]
pub struct SensorLayout {
    sensor_ids: Vec<String>,
    coords: Vec<[f64; 2]>,
    dist: DMatrix<f64>,
}

impl SensorLayout {
    pub fn new(sensor_ids: Vec<String>, coords: Vec<[f64; 2]>) -> Result<Self> {
        let dist = build_spatial_distances(&coords)?;
        Self::with_distances(sensor_ids, coords, dist)
    }

    /// Builds a layout with an explicit distance matrix (override path).
    pub fn with_distances(
        sensor_ids: Vec<String>,
        coords: Vec<[f64; 2]>,
        dist: DMatrix<f64>,
    ) -> Result<Self> {
        let n = sensor_ids.len();
        if n == 0 {
            return Err(Error::InvalidData("layout has no sensors".into()));
        }
        if coords.len() != n {
            return Err(Error::InvalidData(format!(
                "{n} sensor ids but {} coordinate pairs",
                coords.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, id) in sensor_ids.iter().enumerate() {
            if let Some(prev) = seen.insert(id.clone(), i) {
                return Err(Error::InvalidData(format!(
                    "duplicate sensor id {id:?} (rows {prev} and {i})"
                )));
            }
        }
        validate_distance_matrix(&dist, n)?;
        Ok(SensorLayout { sensor_ids, coords, dist })
    }

    pub fn len(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensor_ids.is_empty()
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn dist(&self) -> &DMatrix<f64> {
        &self.dist
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.sensor_ids.iter().position(|s| s == id)
    }

    /// Layout restricted to the given sensor indices, in the given order.
    /// Distances are sliced, not recomputed, so overrides survive.
    pub fn subset(&self, indices: &[usize]) -> Result<SensorLayout> {
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidParameter(format!(
                    "sensor index {i} out of range for {} sensors",
                    self.len()
                )));
            }
        }
        let ids = indices.iter().map(|&i| self.sensor_ids[i].clone()).collect();
        let coords = indices.iter().map(|&i| self.coords[i]).collect();
        let k = indices.len();
        let dist = DMatrix::from_fn(k, k, |a, b| self.dist[(indices[a], indices[b])]);
        SensorLayout::with_distances(ids, coords, dist)
    }

    /// Replaces the distances of the given pairs (both orientations) and
    /// re-validates the matrix.
    pub fn apply_distance_overrides(&mut self, overrides: &[(String, String, f64)]) -> Result<()> {
        let mut dist = self.dist.clone();
        for (a, b, d) in overrides {
            let i = self
                .index_of(a)
                .ok_or_else(|| Error::InvalidData(format!("distance override names unknown sensor {a:?}")))?;
            let j = self
                .index_of(b)
                .ok_or_else(|| Error::InvalidData(format!("distance override names unknown sensor {b:?}")))?;
            if i == j {
                return Err(Error::InvalidData(format!(
                    "distance override for sensor {a:?} against itself"
                )));
            }
            dist[(i, j)] = *d;
            dist[(j, i)] = *d;
        }
        validate_distance_matrix(&dist, self.len())?;
        self.dist = dist;
        Ok(())
    }

    /// Reads a `sensor_id,x,y` CSV.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv_reader(path)?;
        expect_headers(&mut reader, path, &["sensor_id", "x", "y"])?;
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        for (rowno, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::csv(path, e))?;
            let row = rowno + 2; // 1-based, after header
            if record.len() != 3 {
                return Err(Error::parse(path, format!("row {row}: expected 3 fields")));
            }
            ids.push(record[0].to_string());
            coords.push([
                parse_f64(&record[1], path, row, "x")?,
                parse_f64(&record[2], path, row, "y")?,
            ]);
        }
        SensorLayout::new(ids, coords)
    }

    /// Reads a `sensor_a,sensor_b,distance` CSV and applies it.
    pub fn read_distance_overrides(&mut self, path: &Path) -> Result<()> {
        let mut reader = csv_reader(path)?;
        expect_headers(&mut reader, path, &["sensor_a", "sensor_b", "distance"])?;
        let mut overrides = Vec::new();
        for (rowno, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::csv(path, e))?;
            let row = rowno + 2;
            if record.len() != 3 {
                return Err(Error::parse(path, format!("row {row}: expected 3 fields")));
            }
            overrides.push((
                record[0].to_string(),
                record[1].to_string(),
                parse_f64(&record[2], path, row, "distance")?,
            ));
        }
        self.apply_distance_overrides(&overrides)
    }
}

fn validate_distance_matrix(dist: &DMatrix<f64>, n: usize) -> Result<()> {
    if dist.nrows() != n || dist.ncols() != n {
        return Err(Error::InvalidData(format!(
            "distance matrix is {}x{}, expected {n}x{n}",
            dist.nrows(),
            dist.ncols()
        )));
    }
    let mut scale = 0.0f64;
    for j in 0..n {
        if dist[(j, j)] != 0.0 {
            return Err(Error::InvalidData(format!(
                "distance matrix diagonal entry {j} is {}, expected 0",
                dist[(j, j)]
            )));
        }
        for i in 0..n {
            let d = dist[(i, j)];
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidData(format!(
                    "distance ({i}, {j}) = {d} is not a nonnegative finite number"
                )));
            }
            if (d - dist[(j, i)]).abs() > 0.0 {
                return Err(Error::InvalidData(format!(
                    "distance matrix is not symmetric at ({i}, {j})"
                )));
            }
            scale = scale.max(d);
        }
    }
    let tol = 1e-9 * scale.max(1.0);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if dist[(i, j)] > dist[(i, k)] + dist[(k, j)] + tol {
                    return Err(Error::InvalidData(format!(
                        "distances violate the triangle inequality: d({i},{j}) = {} > \
                         d({i},{k}) + d({k},{j}) = {}",
                        dist[(i, j)],
                        dist[(i, k)] + dist[(k, j)]
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ObservationGrid {
    start_time: f64,
    step: f64,
    sensor_ids: Vec<String>,
    /// `T x S`; missing cells hold NaN.
    values: DMatrix<f64>,
    /// `T x S`; true where no observation exists.
    missing: DMatrix<bool>,
}

impl ObservationGrid {
    pub fn new(
        start_time: f64,
        step: f64,
        sensor_ids: Vec<String>,
        values: DMatrix<f64>,
        missing: DMatrix<bool>,
    ) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidData(format!("frame step must be positive, got {step}")));
        }
        if values.ncols() != sensor_ids.len() {
            return Err(Error::InvalidData(format!(
                "{} value columns but {} sensor ids",
                values.ncols(),
                sensor_ids.len()
            )));
        }
        if values.shape() != missing.shape() {
            return Err(Error::InvalidData("value and missing masks differ in shape".into()));
        }
        if values.nrows() == 0 {
            return Err(Error::InvalidData("grid has no frames".into()));
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !missing[(i, j)] && !values[(i, j)].is_finite() {
                    return Err(Error::InvalidData(format!(
                        "non-finite value for sensor {} at frame {i}",
                        sensor_ids[j]
                    )));
                }
            }
        }
        Ok(ObservationGrid { start_time, step, sensor_ids, values, missing })
    }

    /// Fully observed grid.
    pub fn complete(
        start_time: f64,
        step: f64,
        sensor_ids: Vec<String>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        let missing = DMatrix::from_element(values.nrows(), values.ncols(), false);
        Self::new(start_time, step, sensor_ids, values, missing)
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_sensors(&self) -> usize {
        self.values.ncols()
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn missing(&self) -> &DMatrix<bool> {
        &self.missing
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        self.start_time + frame as f64 * self.step
    }

    pub fn is_fully_observed(&self) -> bool {
        !self.missing.iter().any(|&m| m)
    }

    /// Checks that the grid columns match the layout, in order.
    pub fn check_layout(&self, layout: &SensorLayout) -> Result<()> {
        if self.sensor_ids != layout.sensor_ids() {
            return Err(Error::InvalidData(
                "grid columns and layout sensors differ (ids or order)".into(),
            ));
        }
        Ok(())
    }

    /// Last-observation-carried-forward imputation; leading gaps take the
    /// first observed value. Complete grids come back unchanged, so the
    /// operation is idempotent.
    pub fn locf_impute(&self) -> Result<ObservationGrid> {
        let mut values = self.values.clone();
        for j in 0..self.n_sensors() {
            let first_obs = (0..self.n_frames()).find(|&i| !self.missing[(i, j)]);
            let first_obs = first_obs.ok_or_else(|| Error::DegenerateSensor {
                sensor: self.sensor_ids[j].clone(),
                reason: "no observed values to impute from".into(),
            })?;
            let mut last = values[(first_obs, j)];
            for i in 0..self.n_frames() {
                if self.missing[(i, j)] {
                    values[(i, j)] = last;
                } else {
                    last = values[(i, j)];
                }
            }
        }
        let missing = DMatrix::from_element(self.n_frames(), self.n_sensors(), false);
        ObservationGrid::new(self.start_time, self.step, self.sensor_ids.clone(), values, missing)
    }

    /// Bins raw readings onto a regular grid anchored at the earliest
    /// timestamp. Bins are half-open `[start + k*step, start + (k+1)*step)`;
    /// within a bin the last reading by input order wins.
    pub fn project_to_grid(
        readings: &[Reading],
        layout: &SensorLayout,
        step: f64,
    ) -> Result<ObservationGrid> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidData(format!("frame step must be positive, got {step}")));
        }
        if readings.is_empty() {
            return Err(Error::InsufficientData("no readings to project".into()));
        }
        let mut start = f64::INFINITY;
        let mut end = f64::NEG_INFINITY;
        for r in readings {
            if !r.timestamp.is_finite() {
                return Err(Error::InvalidData(format!(
                    "reading for sensor {} has non-finite timestamp",
                    r.sensor_id
                )));
            }
            start = start.min(r.timestamp);
            end = end.max(r.timestamp);
        }
        let frames = ((end - start) / step).floor() as usize + 1;
        let s = layout.len();
        let mut values = DMatrix::from_element(frames, s, f64::NAN);
        let mut missing = DMatrix::from_element(frames, s, true);
        for r in readings {
            let j = layout.index_of(&r.sensor_id).ok_or_else(|| {
                Error::InvalidData(format!("reading names sensor {:?} not present in the layout", r.sensor_id))
            })?;
            let k = ((r.timestamp - start) / step).floor() as usize;
            let k = k.min(frames - 1);
            values[(k, j)] = r.value;
            missing[(k, j)] = false;
        }
        ObservationGrid::new(start, step, layout.sensor_ids().to_vec(), values, missing)
    }

    /// Grid CSV: `timestamp` column followed by one column per sensor,
    /// missing cells empty.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("timestamp");
        for id in &self.sensor_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for i in 0..self.n_frames() {
            out.push_str(&format!("{}", self.timestamp(i)));
            for j in 0..self.n_sensors() {
                out.push(',');
                if !self.missing[(i, j)] {
                    out.push_str(&format!("{}", self.values[(i, j)]));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<ObservationGrid> {
        let mut reader = csv_reader(path)?;
        let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
        if headers.len() < 2 || &headers[0] != "timestamp" {
            return Err(Error::parse(
                path,
                "grid header must be `timestamp` followed by sensor ids".to_string(),
            ));
        }
        let sensor_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let s = sensor_ids.len();
        let mut times = Vec::new();
        let mut cells: Vec<Vec<(f64, bool)>> = Vec::new();
        for (rowno, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::csv(path, e))?;
            let row = rowno + 2;
            if record.len() != s + 1 {
                return Err(Error::parse(
                    path,
                    format!("row {row}: expected {} fields, got {}", s + 1, record.len()),
                ));
            }
            times.push(parse_f64(&record[0], path, row, "timestamp")?);
            let mut line = Vec::with_capacity(s);
            for j in 0..s {
                let field = record[j + 1].trim();
                if field.is_empty() {
                    line.push((f64::NAN, true));
                } else {
                    line.push((parse_f64(field, path, row, &sensor_ids[j])?, false));
                }
            }
            cells.push(line);
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{}: need at least 2 frames to infer the step",
                path.display()
            )));
        }
        let start = times[0];
        let step = times[1] - times[0];
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::parse(path, format!("non-increasing timestamps (step {step})")));
        }
        for (i, &t) in times.iter().enumerate() {
            let expect = start + i as f64 * step;
            if (t - expect).abs() > 1e-6 * step {
                return Err(Error::parse(
                    path,
                    format!("row {}: timestamp {t} is off the regular grid (expected {expect})", i + 2),
                ));
            }
        }
        let t = times.len();
        let values = DMatrix::from_fn(t, s, |i, j| cells[i][j].0);
        let missing = DMatrix::from_fn(t, s, |i, j| cells[i][j].1);
        ObservationGrid::new(start, step, sensor_ids, values, missing)
    }
}

/// Reads a `sensor_id,timestamp,value` CSV.
pub fn read_readings_csv(path: &Path) -> Result<Vec<Reading>> {
    let mut reader = csv_reader(path)?;
    expect_headers(&mut reader, path, &["sensor_id", "timestamp", "value"])?;
    let mut readings = Vec::new();
    for (rowno, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let row = rowno + 2;
        if record.len() != 3 {
            return Err(Error::parse(path, format!("row {row}: expected 3 fields")));
        }
        readings.push(Reading {
            sensor_id: record[0].to_string(),
            timestamp: parse_f64(&record[1], path, row, "timestamp")?,
            value: parse_f64(&record[2], path, row, "value")?,
        });
    }
    Ok(readings)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                let io = match e.into_kind() {
                    csv::ErrorKind::Io(io) => io,
                    _ => unreachable!(),
                };
                Error::io(PathBuf::from(path), io)
            }
            _ => Error::csv(PathBuf::from(path), e),
        })
}

fn expect_headers(
    reader: &mut csv::Reader<std::fs::File>,
    path: &Path,
    expected: &[&str],
) -> Result<()> {
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::parse(
            path,
            format!("expected header {}, got {}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_f64(field: &str, path: &Path, row: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::parse(path, format!("row {row}: {what} field {field:?} is not a number"))
    })
}
