//! In-process enactment of the distributed prediction split: each sensor
//! runs its own temporal forecaster over a local history buffer and ships a
//! [`ForecastMessage`]; a central assembler stacks the messages in layout
//! order and applies the spatial weights. Nodes share nothing, so any
//! delivery interleaving yields the same result, and in shared-model mode
//! the assembled output is bit-identical to the monolithic predictor in
//! forecast-first order (both paths run [`kriging::forecast_series`] and
//! [`kriging::interpolate_forecasts`] on the same values in the same order;
//! [`kriging::MeanStrategy::Auto`] picks that order whenever there are at
//! least as many targets as sensors, and agrees to round-off otherwise).
//!
//! Messages are value objects passed in memory; a deployment would
//! serialize them over its transport (a CSV row form is provided for
//! replay tests). This is the calculus split, not a network stack.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{ObservationGrid, SensorLayout};
use crate::kriging::{self, FittedField, PredictionTarget, TemporalModel};

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastMessage {
    pub sensor_id: String,
    /// Index of the last observed frame the forecasts extend from.
    pub base_frame: usize,
    pub horizon: usize,
    /// Centered forecasts, one per horizon step.
    pub forecasts: Vec<f64>,
    /// Hash of the node's temporal model, for drift detection.
    pub model_version: u64,
    /// True when any retained history frame was locally gap-filled.
    pub gap_filled: bool,
}

impl ForecastMessage {
    /// One-line replay form: `sensor_id,base_frame,horizon,values...,version`.
    /// The gap flag is runtime metadata and is not serialized.
    pub fn to_csv_row(&self) -> String {
        let mut fields = vec![
            self.sensor_id.clone(),
            self.base_frame.to_string(),
            self.horizon.to_string(),
        ];
        fields.extend(self.forecasts.iter().map(|v| v.to_string()));
        fields.push(format!("{:016x}", self.model_version));
        fields.join(",")
    }

    pub fn from_csv_row(line: &str, path: &Path) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::parse(path, format!("message row too short: {line:?}")));
        }
        let sensor_id = fields[0].to_string();
        let base_frame = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, format!("bad base frame {:?}", fields[1])))?;
        let horizon: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, format!("bad horizon {:?}", fields[2])))?;
        if fields.len() != horizon + 4 {
            return Err(Error::parse(
                path,
                format!("expected {} forecast values, row has {}", horizon, fields.len() - 4),
            ));
        }
        let forecasts = fields[3..3 + horizon]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("bad forecast value {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let model_version = u64::from_str_radix(fields[3 + horizon], 16)
            .map_err(|_| Error::parse(path, format!("bad model version {:?}", fields[3 + horizon])))?;
        Ok(ForecastMessage {
            sensor_id,
            base_frame,
            horizon,
            forecasts,
            model_version,
            gap_filled: false,
        })
    }
}

/// A sensor node: its own temporal model and a bounded window of centered
/// residuals. Nodes never see another node's history.
#[derive(Debug, Clone)]
pub struct SensorNodeState {
    sensor_id: String,
    model: TemporalModel,
    version: u64,
    capacity: usize,
    /// `(residual, was_gap_filled)` pairs, oldest first.
    buffer: VecDeque<(f64, bool)>,
    next_frame: Option<usize>,
}

impl SensorNodeState {
    pub fn new(sensor_id: String, model: TemporalModel) -> Self {
        let capacity = model.history_needed().max(1);
        let version = model.version_hash();
        SensorNodeState {
            sensor_id,
            model,
            version,
            capacity,
            buffer: VecDeque::with_capacity(capacity + 1),
            next_frame: None,
        }
    }

    pub fn sensor_id(&self) -> &str {
        &self.sensor_id
    }

    pub fn model(&self) -> &TemporalModel {
        &self.model
    }

    pub fn history_len(&self) -> usize {
        self.buffer.len()
    }

    fn push(&mut self, value: f64, gap: bool) {
        self.buffer.push_back((value, gap));
        while self.buffer.len() > self.capacity {
            self.buffer.pop_front();
        }
    }
}

/// Feeds one reading to a node and, on request frames, emits a forecast
/// message. A skipped frame is filled locally by carrying the last centered
/// residual forward (the node's LOCF; it has no trend values for frames it
/// never saw), and every message built on such history is flagged.
pub fn sensor_step(
    state: &mut SensorNodeState,
    frame: usize,
    reading: f64,
    trend_value: f64,
    request_horizon: Option<usize>,
) -> Result<Option<ForecastMessage>> {
    if let Some(expected) = state.next_frame {
        if frame < expected {
            return Err(Error::InvalidData(format!(
                "sensor {} got frame {frame} after already processing frame {}",
                state.sensor_id,
                expected - 1
            )));
        }
        let mut gap_frame = expected;
        while gap_frame < frame {
            let carried = state.buffer.back().map_or(0.0, |&(v, _)| v);
            state.push(carried, true);
            gap_frame += 1;
        }
    }
    state.push(reading - trend_value, false);
    state.next_frame = Some(frame + 1);

    let Some(horizon) = request_horizon else {
        return Ok(None);
    };
    let history: Vec<f64> = state.buffer.iter().map(|&(v, _)| v).collect();
    let forecasts = kriging::forecast_series(&state.model, &history, horizon)?;
    Ok(Some(ForecastMessage {
        sensor_id: state.sensor_id.clone(),
        base_frame: frame,
        horizon,
        forecasts,
        model_version: state.version,
        gap_filled: state.buffer.iter().any(|&(_, g)| g),
    }))
}

/// Stacks one message per layout sensor into the centered forecast matrix
/// and interpolates: `y' = mu' + zhat beta_S^T`. Column order is the layout
/// order, fixing the summation order regardless of message arrival order.
/// `expected_version` enforces shared-model mode.
pub fn server_assemble(
    messages: &[ForecastMessage],
    layout: &SensorLayout,
    weights: &DMatrix<f64>,
    mu_prime: &[f64],
    expected_version: Option<u64>,
) -> Result<DMatrix<f64>> {
    let s = layout.len();
    let mut slots: Vec<Option<&ForecastMessage>> = vec![None; s];
    for msg in messages {
        let idx = layout.index_of(&msg.sensor_id).ok_or_else(|| {
            Error::Assembly(format!("message from unknown sensor {}", msg.sensor_id))
        })?;
        if slots[idx].is_some() {
            return Err(Error::Assembly(format!(
                "duplicate message from sensor {}",
                msg.sensor_id
            )));
        }
        slots[idx] = Some(msg);
    }
    let mut stacked: Vec<&ForecastMessage> = Vec::with_capacity(s);
    for (idx, slot) in slots.iter().enumerate() {
        stacked.push(slot.ok_or_else(|| {
            Error::Assembly(format!("no message from sensor {}", layout.sensor_ids()[idx]))
        })?);
    }
    let first = stacked[0];
    for msg in &stacked {
        if msg.base_frame != first.base_frame || msg.horizon != first.horizon {
            return Err(Error::Assembly(format!(
                "sensor {} reports base frame {} / horizon {}, expected {} / {}",
                msg.sensor_id, msg.base_frame, msg.horizon, first.base_frame, first.horizon
            )));
        }
        if let Some(v) = expected_version {
            if msg.model_version != v {
                return Err(Error::Assembly(format!(
                    "sensor {} uses temporal model {:016x} but the shared model is {v:016x}",
                    msg.sensor_id, msg.model_version
                )));
            }
        }
    }
    if mu_prime.len() != first.horizon {
        return Err(Error::Assembly(format!(
            "{} trend values for horizon {}",
            mu_prime.len(),
            first.horizon
        )));
    }
    let zhat =
        DMatrix::from_fn(first.horizon, s, |h, col| stacked[col].forecasts[h]);
    Ok(kriging::interpolate_forecasts(&zhat, weights, mu_prime))
}

/// Temporal models in force across the network.
#[derive(Debug, Clone)]
pub enum RuntimeMode {
    /// Every node runs the field's temporal model; versions are enforced.
    Shared,
    /// One model per sensor, by layout index.
    PerSensor(Vec<TemporalModel>),
}

#[derive(Debug, Clone)]
pub struct DistributedRun {
    pub mean: DMatrix<f64>,
    pub messages: Vec<ForecastMessage>,
}

/// Replays a grid through per-sensor nodes frame by frame and assembles the
/// final prediction. `delivery` optionally permutes the within-frame
/// delivery order (one permutation per frame) to exercise scheduling; the
/// result is delivery-invariant because nodes are independent. Missing
/// readings are simply not delivered, so nodes gap-fill locally.
pub fn run_distributed(
    field: &FittedField,
    grid: &ObservationGrid,
    layout: &SensorLayout,
    target: &PredictionTarget,
    mode: &RuntimeMode,
    delivery: Option<&[Vec<usize>]>,
) -> Result<DistributedRun> {
    grid.check_layout(layout)?;
    let horizon = target.horizon();
    if horizon == 0 {
        return Err(Error::InvalidParameter(
            "the distributed runtime forecasts ahead; use the predictor for horizon 0".into(),
        ));
    }
    let s = layout.len();
    let mut nodes: Vec<SensorNodeState> = match mode {
        RuntimeMode::Shared => (0..s)
            .map(|i| SensorNodeState::new(layout.sensor_ids()[i].clone(), field.temporal.clone()))
            .collect(),
        RuntimeMode::PerSensor(models) => {
            if models.len() != s {
                return Err(Error::InvalidParameter(format!(
                    "{} sensor models for {} sensors",
                    models.len(),
                    s
                )));
            }
            (0..s)
                .map(|i| SensorNodeState::new(layout.sensor_ids()[i].clone(), models[i].clone()))
                .collect()
        }
    };

    let window = field.trend.window();
    let t = grid.n_frames();
    if t <= window {
        return Err(Error::InsufficientData(format!(
            "grid has {t} frames but the trend consumes the first {window}"
        )));
    }
    let values = grid.values();
    let missing = grid.missing();
    let mut messages: Vec<Option<ForecastMessage>> = vec![None; s];
    for frame in window..t {
        let m_t = field.trend.value_at(frame).ok_or_else(|| {
            Error::InvalidData(format!("trend has no value at frame {frame}"))
        })?;
        let order: Vec<usize> = match delivery.and_then(|d| d.get(frame - window)) {
            Some(perm) => perm.clone(),
            None => (0..s).collect(),
        };
        if order.len() != s {
            return Err(Error::InvalidParameter(format!(
                "delivery permutation for frame {frame} has {} entries for {s} sensors",
                order.len()
            )));
        }
        let request = (frame == t - 1).then_some(horizon);
        for &j in &order {
            if j >= s {
                return Err(Error::InvalidParameter(format!(
                    "delivery permutation names sensor {j} of {s}"
                )));
            }
            if missing[(frame, j)] {
                continue; // never delivered; the node gap-fills on its next reading
            }
            if let Some(msg) = sensor_step(&mut nodes[j], frame, values[(frame, j)], m_t, request)? {
                messages[j] = Some(msg);
            }
        }
        // a sensor silent on the request frame cannot emit; assembly will
        // name it below
    }
    let messages: Vec<ForecastMessage> = messages.into_iter().flatten().collect();

    let weights = kriging::spatial_weights(&field.spatial, layout, target.locations())?;
    let mu_prime = field.trend.future(horizon);
    let expected = match mode {
        RuntimeMode::Shared => Some(field.temporal.version_hash()),
        RuntimeMode::PerSensor(_) => None,
    };
    let mean = server_assemble(&messages, layout, &weights, mu_prime.as_slice(), expected)?;
    Ok(DistributedRun { mean, messages })
}
