use chrono::{DateTime, Duration, DurationRound, Utc};
use serde::{Deserialize, Serialize};

use super::features::engineer_features;
use super::series::{MovementSeries, SeriesPoint};
use super::EnergyError;
use crate::model::{Config, DayType};

/// Day-type × hour-of-day cell means.
///
/// `cells[d][h]` is the mean of training counts falling on day type `d`
/// at local hour `h`, or `None` when no training point fell there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub street_id: String,
    pub cells: [[Option<f64>; 24]; 2],
    pub cell_counts: [[u32; 24]; 2],
    /// Mean over all training counts of each day type.
    pub fallback: [Option<f64>; 2],
    pub trained_from: DateTime<Utc>,
    pub trained_to: DateTime<Utc>,
    /// Population standard deviation of training counts around their cell mean.
    pub residual_stdev: f64,
    pub n_train: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Cell,
    Fallback,
    Default,
}

impl ForecastModel {
    /// Prediction for an hour: cell mean, else the day type's fallback,
    /// else zero.
    pub fn predict(&self, ts: DateTime<Utc>, config: &Config) -> (f64, PredictionSource) {
        let f = engineer_features(ts, config, None, None);
        let d = f.day_type.index();
        if let Some(v) = self.cells[d][f.hour_of_day as usize] {
            (v, PredictionSource::Cell)
        } else if let Some(v) = self.fallback[d] {
            (v, PredictionSource::Fallback)
        } else {
            (0.0, PredictionSource::Default)
        }
    }
}

/// Fit the cell-mean model. Point order does not matter.
pub fn fit_model(series: &MovementSeries, config: &Config) -> Result<ForecastModel, EnergyError> {
    let mut points: Vec<(DateTime<Utc>, f64)> = series.present().collect();
    if points.is_empty() {
        return Err(EnergyError::InsufficientData { street_id: series.street_id.clone(), needed: 1, found: 0 });
    }
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut sums = [[0.0f64; 24]; 2];
    let mut counts = [[0u32; 24]; 2];
    let keys: Vec<(usize, usize)> = points
        .iter()
        .map(|&(ts, _)| {
            let f = engineer_features(ts, config, None, None);
            (f.day_type.index(), f.hour_of_day as usize)
        })
        .collect();
    for (&(d, h), &(_, v)) in keys.iter().zip(&points) {
        sums[d][h] += v;
        counts[d][h] += 1;
    }

    let mut cells = [[None; 24]; 2];
    let mut fallback = [None; 2];
    for d in DayType::ALL.map(DayType::index) {
        let mut day_sum = 0.0;
        let mut day_n = 0u32;
        for h in 0..24 {
            if counts[d][h] > 0 {
                cells[d][h] = Some(sums[d][h] / counts[d][h] as f64);
                day_sum += sums[d][h];
                day_n += counts[d][h];
            }
        }
        if day_n > 0 {
            fallback[d] = Some(day_sum / day_n as f64);
        }
    }

    let sq: f64 = keys
        .iter()
        .zip(&points)
        .map(|(&(d, h), &(_, v))| (v - cells[d][h].expect("cell has data")).powi(2))
        .sum();
    let residual_stdev = (sq / points.len() as f64).sqrt();

    Ok(ForecastModel {
        street_id: series.street_id.clone(),
        cells,
        cell_counts: counts,
        fallback,
        trained_from: points.first().expect("nonempty").0,
        trained_to: points.last().expect("nonempty").0,
        residual_stdev,
        n_train: points.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub ts: DateTime<Utc>,
    pub predicted: f64,
    pub source: PredictionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub street_id: String,
    pub generated_at: DateTime<Utc>,
    pub points: Vec<ForecastPoint>,
    pub warnings: Vec<String>,
}

impl Forecast {
    pub fn as_series(&self) -> Vec<SeriesPoint> {
        self.points.iter().map(|p| SeriesPoint { ts: p.ts, count: Some(p.predicted) }).collect()
    }
}

/// First whole hour at or after `ts`.
pub fn hour_ceil(ts: DateTime<Utc>) -> DateTime<Utc> {
    let floor = ts.duration_trunc(Duration::hours(1)).expect("hour truncation in range");
    if floor == ts {
        ts
    } else {
        floor + Duration::hours(1)
    }
}

/// Predict 24 consecutive hours starting at the first whole hour at or
/// after `from`.
pub fn forecast_24h(model: &ForecastModel, from: DateTime<Utc>, config: &Config) -> Forecast {
    let start = hour_ceil(from);
    let mut warnings = Vec::new();
    let points = (0..24)
        .map(|i| {
            let ts = start + Duration::hours(i);
            let (predicted, source) = model.predict(ts, config);
            if source == PredictionSource::Default {
                warnings.push(format!("no training data for {}; predicted 0", ts.to_rfc3339()));
            }
            ForecastPoint { ts, predicted, source }
        })
        .collect();
    Forecast { street_id: model.street_id.clone(), generated_at: from, points, warnings }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mae: f64,
    /// Mean absolute percentage error in percent over points with a
    /// positive actual; `None` when there are none.
    pub mape: Option<f64>,
    pub n: usize,
}

/// Score the model on the present points of a holdout series.
pub fn evaluate(model: &ForecastModel, holdout: &MovementSeries, config: &Config) -> Result<Evaluation, EnergyError> {
    let mut abs_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut n = 0;
    let mut n_pct = 0;
    for (ts, actual) in holdout.present() {
        let (pred, _) = model.predict(ts, config);
        let err = (pred - actual).abs();
        abs_sum += err;
        n += 1;
        if actual > 0.0 {
            pct_sum += err / actual;
            n_pct += 1;
        }
    }
    if n == 0 {
        return Err(EnergyError::InsufficientData { street_id: holdout.street_id.clone(), needed: 1, found: 0 });
    }
    Ok(Evaluation {
        mae: abs_sum / n as f64,
        mape: (n_pct > 0).then(|| 100.0 * pct_sum / n_pct as f64),
        n,
    })
}

/// Evaluation result as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub street_id: String,
    pub mae: f64,
    pub mape: Option<f64>,
    pub n: usize,
    pub trained_from: DateTime<Utc>,
    pub trained_to: DateTime<Utc>,
}

impl EvaluationReport {
    pub fn new(model: &ForecastModel, eval: &Evaluation) -> Self {
        EvaluationReport {
            street_id: model.street_id.clone(),
            mae: eval.mae,
            mape: eval.mape,
            n: eval.n,
            trained_from: model.trained_from,
            trained_to: model.trained_to,
        }
    }
}
