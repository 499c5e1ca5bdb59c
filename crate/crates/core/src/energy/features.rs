use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::series::hour_floor;
use crate::model::{Config, DayType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weather {
    pub temp_c: f64,
    pub humidity_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub hour_of_day: u32,
    pub day_type: DayType,
    pub is_holiday: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weather: Option<Weather>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event: Option<bool>,
}

/// Hourly weather readings keyed by hour.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeatherFeed {
    readings: BTreeMap<DateTime<Utc>, Weather>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeatherLine {
    ts: DateTime<Utc>,
    temp_c: f64,
    humidity_pct: f64,
}

impl WeatherFeed {
    /// Parse JSON Lines of `{ts, temp_c, humidity_pct}`.
    pub fn parse(text: &str) -> Result<WeatherFeed, String> {
        let mut readings = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let w: WeatherLine = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            if !(0.0..=100.0).contains(&w.humidity_pct) || !w.temp_c.is_finite() {
                return Err(format!("line {}: weather values out of range", i + 1));
            }
            readings.insert(hour_floor(w.ts), Weather { temp_c: w.temp_c, humidity_pct: w.humidity_pct });
        }
        Ok(WeatherFeed { readings })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<WeatherFeed, String> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| e.to_string())?;
        WeatherFeed::parse(&text)
    }

    pub fn at(&self, ts: DateTime<Utc>) -> Option<Weather> {
        self.readings.get(&hour_floor(ts)).copied()
    }
}

/// Local dates with a city event (fair, match, festival...).
pub type EventCalendar = BTreeSet<NaiveDate>;

/// Temporal features of an hour, plus weather and event flags when those
/// sources are supplied.
pub fn engineer_features(
    ts: DateTime<Utc>,
    config: &Config,
    weather: Option<&WeatherFeed>,
    events: Option<&EventCalendar>,
) -> FeatureVector {
    let date = config.local_date(ts);
    FeatureVector {
        hour_of_day: config.local_hour(ts),
        day_type: crate::model::day_type(date, &config.holidays),
        is_holiday: config.holidays.contains(&date),
        weather: weather.and_then(|w| w.at(ts)),
        event: events.map(|e| e.contains(&date)),
    }
}
