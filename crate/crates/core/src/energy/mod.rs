//! Energy management: movement series cleaning, the day-type × hour
//! forecaster, zero-activity night blocks and lighting recommendations.

pub mod blocks;
pub mod features;
pub mod forecast;
pub mod preprocess;
pub mod recommend;
pub mod series;

use thiserror::Error;

pub use blocks::{find_zero_blocks, night_of, ActivityBlock, BlockBasis};
pub use features::{engineer_features, EventCalendar, FeatureVector, Weather, WeatherFeed};
pub use forecast::{evaluate, fit_model, forecast_24h, Evaluation, EvaluationReport, Forecast, ForecastModel, ForecastPoint, PredictionSource};
pub use preprocess::preprocess_series;
pub use recommend::{recommend, savings_kwh, DimmingRecommendation, LightingAction};
pub use series::{build_movement_series, MovementSeries, SeriesPoint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnergyError {
    #[error("street {street_id}: insufficient data (need {needed} present points, found {found})")]
    InsufficientData { street_id: String, needed: usize, found: usize },
}
