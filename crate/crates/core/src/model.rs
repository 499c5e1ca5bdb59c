//! Shared domain types, configuration and calendar/geodesic helpers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, TimeZone, Timelike, Utc, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for all distance computations.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A WGS84 coordinate in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, InvalidCoordinate> {
        let p = GeoPoint { lat, lon };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), InvalidCoordinate> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(InvalidCoordinate::Latitude(self.lat));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(InvalidCoordinate::Longitude(self.lon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvalidCoordinate {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
}

/// Great-circle distance in meters between two points on a sphere of
/// radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // h can drift a hair above 1 for antipodal points
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// A lamp post carrying a radar, a camera and a pedestrian counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmartPost {
    pub post_id: String,
    pub street_id: String,
    pub location: GeoPoint,
    /// km/h
    pub speed_limit: u32,
    pub lamp_count: u32,
    /// Watts per lamp.
    pub lamp_wattage: f64,
    pub dimmable: bool,
}

impl SmartPost {
    pub fn check(&self) -> Result<(), String> {
        self.location
            .check()
            .map_err(|e| format!("post {}: {e}", self.post_id))?;
        if self.speed_limit == 0 {
            return Err(format!("post {}: speed_limit must be > 0", self.post_id));
        }
        if !(self.lamp_wattage.is_finite() && self.lamp_wattage >= 0.0) {
            return Err(format!("post {}: lamp_wattage must be >= 0", self.post_id));
        }
        Ok(())
    }
}

/// Known posts keyed by id. Built once at startup and shared read-only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostRegistry {
    posts: BTreeMap<String, SmartPost>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("cannot read post registry: {0}")]
    Io(String),
    #[error("malformed post registry: {0}")]
    Parse(String),
    #[error("duplicate post_id {0}")]
    Duplicate(String),
    #[error("{0}")]
    Invalid(String),
}

impl PostRegistry {
    pub fn new(posts: impl IntoIterator<Item = SmartPost>) -> Result<Self, RegistryError> {
        let mut map = BTreeMap::new();
        for post in posts {
            post.check().map_err(RegistryError::Invalid)?;
            if map.contains_key(&post.post_id) {
                return Err(RegistryError::Duplicate(post.post_id));
            }
            map.insert(post.post_id.clone(), post);
        }
        Ok(PostRegistry { posts: map })
    }

    /// Reads a JSON array of posts.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RegistryError::Io(format!("{}: {e}", path.display())))?;
        let posts: Vec<SmartPost> =
            serde_json::from_str(&text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        PostRegistry::new(posts)
    }

    pub fn get(&self, post_id: &str) -> Option<&SmartPost> {
        self.posts.get(post_id)
    }

    pub fn contains(&self, post_id: &str) -> bool {
        self.posts.contains_key(post_id)
    }

    pub fn posts(&self) -> impl Iterator<Item = &SmartPost> {
        self.posts.values()
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn street_of(&self, post_id: &str) -> Option<&str> {
        self.posts.get(post_id).map(|p| p.street_id.as_str())
    }

    /// Street ids in sorted order.
    pub fn streets(&self) -> BTreeSet<&str> {
        self.posts.values().map(|p| p.street_id.as_str()).collect()
    }

    pub fn has_street(&self, street_id: &str) -> bool {
        self.posts.values().any(|p| p.street_id == street_id)
    }

    pub fn posts_on_street<'a>(&'a self, street_id: &'a str) -> impl Iterator<Item = &'a SmartPost> + 'a {
        self.posts.values().filter(move |p| p.street_id == street_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Danger,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Warning => "warning",
            Severity::Danger => "danger",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Workday,
    Weekend,
}

impl DayType {
    pub const ALL: [DayType; 2] = [DayType::Workday, DayType::Weekend];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Saturdays, Sundays and listed holidays are weekend-type days.
pub fn day_type(date: NaiveDate, holidays: &BTreeSet<NaiveDate>) -> DayType {
    match date.weekday() {
        Weekday::Sat | Weekday::Sun => DayType::Weekend,
        _ if holidays.contains(&date) => DayType::Weekend,
        _ => DayType::Workday,
    }
}

/// Half-open range of local hours `[start, end)`, wrapping past midnight
/// when `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[u32; 2]", try_from = "[u32; 2]")]
pub struct NightWindow {
    pub start: u32,
    pub end: u32,
}

impl NightWindow {
    pub fn contains(&self, hour: u32) -> bool {
        if self.start < self.end {
            (self.start..self.end).contains(&hour)
        } else {
            hour >= self.start || hour < self.end
        }
    }

    pub fn wraps(&self) -> bool {
        self.start > self.end
    }
}

impl From<NightWindow> for [u32; 2] {
    fn from(w: NightWindow) -> Self {
        [w.start, w.end]
    }
}

impl TryFrom<[u32; 2]> for NightWindow {
    type Error = String;

    fn try_from([start, end]: [u32; 2]) -> Result<Self, String> {
        if start > 23 || end > 23 {
            return Err("night_window hours must lie in 0..=23".into());
        }
        if start == end {
            return Err("night_window start and end must differ".into());
        }
        Ok(NightWindow { start, end })
    }
}

/// The instant local midnight starts `date` in `tz` (the earlier one if
/// midnight repeats, the first valid instant after a gap).
pub fn local_midnight(date: NaiveDate, tz: Tz) -> DateTime<Utc> {
    let mut t = date.and_time(NaiveTime::MIN);
    loop {
        if let Some(local) = tz.from_local_datetime(&t).earliest() {
            return local.with_timezone(&Utc);
        }
        t += chrono::Duration::minutes(30);
    }
}

/// Validated runtime configuration. Build it with [`validate_config`] or
/// [`Config::default`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "RawConfig")]
pub struct Config {
    /// Window length in minutes; always divides 60.
    pub cadence: u32,
    pub night_window: NightWindow,
    pub speeding_ratio_threshold: f64,
    pub frequency_horizon_days: u32,
    pub frequency_bands: [u32; 2],
    pub dedup_radius_m: f64,
    pub max_gap_hours: u32,
    pub outlier_k: f64,
    pub dim_level: f64,
    pub min_block_hours: u32,
    pub urgency_cuts: [f64; 2],
    pub holidays: BTreeSet<NaiveDate>,
    pub timezone: Tz,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            cadence: 15,
            night_window: NightWindow { start: 22, end: 6 },
            speeding_ratio_threshold: 1.0,
            frequency_horizon_days: 7,
            frequency_bands: [3, 10],
            dedup_radius_m: 25.0,
            max_gap_hours: 3,
            outlier_k: 3.0,
            dim_level: 0.3,
            min_block_hours: 1,
            urgency_cuts: [0.5, 0.8],
            holidays: BTreeSet::new(),
            timezone: chrono_tz::Europe::Lisbon,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Config::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Config, ConfigError> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        validate_config(raw)
    }

    /// The document form of this config; validating it yields `self` again.
    pub fn to_raw(&self) -> RawConfig {
        RawConfig {
            cadence: Some(self.cadence as i64),
            night_window: Some([self.night_window.start as i64, self.night_window.end as i64]),
            speeding_ratio_threshold: Some(self.speeding_ratio_threshold),
            frequency_horizon_days: Some(self.frequency_horizon_days as i64),
            frequency_bands: Some(self.frequency_bands.iter().map(|&b| b as i64).collect()),
            dedup_radius_m: Some(self.dedup_radius_m),
            max_gap_hours: Some(self.max_gap_hours as i64),
            outlier_k: Some(self.outlier_k),
            dim_level: Some(self.dim_level),
            min_block_hours: Some(self.min_block_hours as i64),
            urgency_cuts: Some(self.urgency_cuts.to_vec()),
            holidays: Some(self.holidays.iter().copied().collect()),
            timezone: Some(self.timezone.name().to_string()),
        }
    }

    pub fn local_hour(&self, ts: DateTime<Utc>) -> u32 {
        ts.with_timezone(&self.timezone).hour()
    }

    pub fn local_date(&self, ts: DateTime<Utc>) -> NaiveDate {
        ts.with_timezone(&self.timezone).date_naive()
    }

    pub fn day_type_at(&self, ts: DateTime<Utc>) -> DayType {
        day_type(self.local_date(ts), &self.holidays)
    }

    pub fn is_holiday(&self, ts: DateTime<Utc>) -> bool {
        self.holidays.contains(&self.local_date(ts))
    }
}

impl From<Config> for RawConfig {
    fn from(c: Config) -> Self {
        c.to_raw()
    }
}

/// Config document as read from disk. Every field is optional; unknown
/// keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cadence: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub night_window: Option<[i64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speeding_ratio_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_horizon_days: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_bands: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dedup_radius_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_gap_hours: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_block_hours: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub urgency_cuts: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holidays: Option<Vec<NaiveDate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timezone: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("malformed config document: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

fn positive_int(field: &'static str, v: Option<i64>, default: u32) -> Result<u32, ConfigError> {
    match v {
        None => Ok(default),
        Some(v) if v > 0 && v <= u32::MAX as i64 => Ok(v as u32),
        Some(v) => Err(invalid(field, format!("{field} must be a positive integer, got {v}"))),
    }
}

fn positive_real(field: &'static str, v: Option<f64>, default: f64) -> Result<f64, ConfigError> {
    match v {
        None => Ok(default),
        Some(v) if v.is_finite() && v > 0.0 => Ok(v),
        Some(v) => Err(invalid(field, format!("{field} must be positive, got {v}"))),
    }
}

/// Apply defaults and check every invariant, naming the offending field.
pub fn validate_config(raw: RawConfig) -> Result<Config, ConfigError> {
    let d = Config::default();

    let cadence = positive_int("cadence", raw.cadence, d.cadence)?;
    if 60 % cadence != 0 {
        return Err(invalid("cadence", "cadence must divide 60"));
    }

    let night_window = match raw.night_window {
        None => d.night_window,
        Some([s, e]) => {
            let hour = |h: i64| u32::try_from(h).map_err(|_| invalid("night_window", "night_window hours must lie in 0..=23"));
            NightWindow::try_from([hour(s)?, hour(e)?]).map_err(|m| invalid("night_window", m))?
        }
    };

    let speeding_ratio_threshold = match raw.speeding_ratio_threshold {
        None => d.speeding_ratio_threshold,
        Some(v) if v.is_finite() && v >= 0.0 => v,
        Some(v) => {
            return Err(invalid(
                "speeding_ratio_threshold",
                format!("speeding_ratio_threshold must be >= 0, got {v}"),
            ))
        }
    };

    let frequency_horizon_days =
        positive_int("frequency_horizon_days", raw.frequency_horizon_days, d.frequency_horizon_days)?;

    let frequency_bands = match raw.frequency_bands {
        None => d.frequency_bands,
        Some(b) => {
            let [lo, hi] = <[i64; 2]>::try_from(b)
                .map_err(|_| invalid("frequency_bands", "frequency_bands needs exactly two cut points"))?;
            if lo < 0 || hi > u32::MAX as i64 {
                return Err(invalid("frequency_bands", "frequency_bands must be nonnegative"));
            }
            if lo >= hi {
                return Err(invalid("frequency_bands", "cut points must be strictly increasing"));
            }
            [lo as u32, hi as u32]
        }
    };

    let dedup_radius_m = positive_real("dedup_radius_m", raw.dedup_radius_m, d.dedup_radius_m)?;
    let max_gap_hours = positive_int("max_gap_hours", raw.max_gap_hours, d.max_gap_hours)?;
    let outlier_k = positive_real("outlier_k", raw.outlier_k, d.outlier_k)?;

    let dim_level = match raw.dim_level {
        None => d.dim_level,
        Some(v) if v > 0.0 && v < 1.0 => v,
        Some(v) => return Err(invalid("dim_level", format!("dim_level must lie in (0, 1), got {v}"))),
    };

    let min_block_hours = positive_int("min_block_hours", raw.min_block_hours, d.min_block_hours)?;

    let urgency_cuts = match raw.urgency_cuts {
        None => d.urgency_cuts,
        Some(c) => {
            let [lo, hi] = <[f64; 2]>::try_from(c)
                .map_err(|_| invalid("urgency_cuts", "urgency_cuts needs exactly two cut points"))?;
            if lo >= hi {
                return Err(invalid("urgency_cuts", "cut points must be strictly increasing"));
            }
            if !(lo > 0.0 && hi < 1.0) {
                return Err(invalid("urgency_cuts", "cut points must lie in (0, 1)"));
            }
            [lo, hi]
        }
    };

    let holidays = raw.holidays.unwrap_or_default().into_iter().collect();

    let timezone = match raw.timezone {
        None => d.timezone,
        Some(name) => name
            .parse::<Tz>()
            .map_err(|_| invalid("timezone", format!("unknown IANA timezone {name:?}")))?,
    };

    Ok(Config {
        cadence,
        night_window,
        speeding_ratio_threshold,
        frequency_horizon_days,
        frequency_bands,
        dedup_radius_m,
        max_gap_hours,
        outlier_k,
        dim_level,
        min_block_hours,
        urgency_cuts,
        holidays,
        timezone,
    })
}
