//! Offline replay: load a dataset directory, push it through every engine,
//! train on the first part and score on the rest.

pub mod generate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Months, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use generate::{generate, generate_dataset, Generated, Profile, Truth};
use generate::{CONFIG_FILE, DETECTIONS_FILE, PEDESTRIANS_FILE, POSTS_FILE, RADAR_FILE, RULES_FILE};

use crate::energy::{
    build_movement_series, evaluate, fit_model, forecast_24h, preprocess_series, BlockBasis, ForecastModel,
};
use crate::ingest::{parse_batch, segregate_by_post, Event, FeedKind, PedestrianCount, RadarReading};
use crate::maintenance::{DetectionClass, Urgency};
use crate::model::{Config, ConfigError, PostRegistry, Severity};
use crate::safety::{hourly_speeding_ratio, RuleId};
use crate::service::{CityState, Command};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{}{}: {message}", file.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Data { file: PathBuf, line: Option<usize>, message: String },
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Argument(String),
}

impl ReplayError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReplayError::Config(_) => 3,
            ReplayError::Data { .. } | ReplayError::Argument(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub name: String,
    pub text: String,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

/// A parsed dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: Config,
    pub registry: PostRegistry,
    pub radar: Vec<(Value, Event)>,
    pub pedestrians: Vec<(Value, Event)>,
    pub detections: Vec<(Value, Event)>,
    pub rules: Vec<RuleSpec>,
    /// SHA-256 over the feed, post and rule files.
    pub sha256: String,
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, ReplayError> {
    match std::fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(ReplayError::Data { file: path.to_path_buf(), line: None, message: e.to_string() }),
    }
}

fn utf8(path: &Path, bytes: &[u8]) -> Result<String, ReplayError> {
    String::from_utf8(bytes.to_vec())
        .map_err(|e| ReplayError::Data { file: path.to_path_buf(), line: None, message: e.to_string() })
}

impl Dataset {
    /// Load `dir`. Missing feed or rule files count as empty; a missing
    /// config means defaults unless `config` overrides it.
    pub fn load(dir: impl AsRef<Path>, config: Option<&Path>) -> Result<Dataset, ReplayError> {
        let dir = dir.as_ref();
        let config = match config {
            Some(p) => Config::load(p)?,
            None if dir.join(CONFIG_FILE).exists() => Config::load(dir.join(CONFIG_FILE))?,
            None => Config::default(),
        };

        let mut hasher = Sha256::new();
        let mut file = |name: &str| -> Result<(PathBuf, String), ReplayError> {
            let path = dir.join(name);
            let bytes = read_optional(&path)?.unwrap_or_default();
            hasher.update(name.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
            let text = utf8(&path, &bytes)?;
            Ok((path, text))
        };

        let (posts_path, posts_text) = file(POSTS_FILE)?;
        let registry = if posts_text.trim().is_empty() {
            PostRegistry::default()
        } else {
            let posts: Vec<crate::model::SmartPost> = serde_json::from_str(&posts_text).map_err(|e| ReplayError::Data {
                file: posts_path.clone(),
                line: Some(e.line()),
                message: e.to_string(),
            })?;
            PostRegistry::new(posts)
                .map_err(|e| ReplayError::Data { file: posts_path, line: None, message: e.to_string() })?
        };

        let mut feed = |name: &str, kind: FeedKind| -> Result<Vec<(Value, Event)>, ReplayError> {
            let (path, text) = file(name)?;
            parse_batch(kind, &text).map_err(|e| ReplayError::Data { file: path, line: Some(e.line), message: e.error.to_string() })
        };
        let radar = feed(RADAR_FILE, FeedKind::Radar)?;
        let pedestrians = feed(PEDESTRIANS_FILE, FeedKind::Pedestrian)?;
        let detections = feed(DETECTIONS_FILE, FeedKind::Detection)?;

        let (rules_path, rules_text) = file(RULES_FILE)?;
        let rules: Vec<RuleSpec> = if rules_text.trim().is_empty() {
            Vec::new()
        } else {
            serde_json::from_str(&rules_text).map_err(|e| ReplayError::Data {
                file: rules_path.clone(),
                line: Some(e.line()),
                message: e.to_string(),
            })?
        };
        for (i, r) in rules.iter().enumerate() {
            crate::safety::parse_rule(&r.text).map_err(|e| ReplayError::Data {
                file: rules_path.clone(),
                line: None,
                message: format!("rule {} ({:?}): {e}", i + 1, r.name),
            })?;
        }

        let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Ok(Dataset { config, registry, radar, pedestrians, detections, rules, sha256 })
    }

    /// All events, feeds in radar, pedestrian, detection order.
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.radar.iter().chain(&self.pedestrians).chain(&self.detections).map(|(_, e)| e)
    }

    pub fn time_range(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let mut it = self.events().map(Event::timestamp);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t))))
    }
}

/// Events strictly before `boundary` and events at or after it, each in
/// input order. The boundary must lie within the events' time range.
pub fn split_train_holdout(events: &[Event], boundary: DateTime<Utc>) -> Result<(Vec<Event>, Vec<Event>), ReplayError> {
    if let (Some(first), Some(last)) =
        (events.iter().map(Event::timestamp).min(), events.iter().map(Event::timestamp).max())
    {
        if boundary < first || boundary > last {
            return Err(ReplayError::Argument(format!(
                "boundary {boundary} lies outside the data range {first} .. {last}"
            )));
        }
    }
    Ok(events.iter().cloned().partition(|e| e.timestamp() < boundary))
}

/// Local midnight starting the month after the one containing `ts`.
pub fn next_month_start(ts: DateTime<Utc>, config: &Config) -> DateTime<Utc> {
    let d = config.local_date(ts);
    let first = NaiveDate::from_ymd_opt(d.year(), d.month(), 1).expect("first of month") + Months::new(1);
    crate::model::local_midnight(first, config.timezone)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub sha256: String,
    pub first: Option<DateTime<Utc>>,
    pub last: Option<DateTime<Utc>>,
    pub radar: usize,
    pub pedestrians: usize,
    pub detections: usize,
    pub quarantined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetMetrics {
    pub street_id: String,
    pub n_train: usize,
    pub mae: f64,
    /// Percent.
    pub mape: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedStreet {
    pub street_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSection {
    pub boundary: Option<DateTime<Utc>>,
    pub streets: Vec<StreetMetrics>,
    pub skipped: Vec<SkippedStreet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationTotals {
    pub total: usize,
    pub by_severity: BTreeMap<Severity, usize>,
    pub by_rule: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockTotals {
    pub count: usize,
    pub hours: u64,
    pub estimated_savings_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSection {
    pub dim_level: f64,
    pub total: BlockTotals,
    pub by_street: BTreeMap<String, BlockTotals>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueTotals {
    pub total: usize,
    pub detections: u64,
    pub by_class: BTreeMap<DetectionClass, usize>,
    pub by_urgency: BTreeMap<Urgency, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub dataset: DatasetSummary,
    pub forecast: ForecastSection,
    pub violations: ViolationTotals,
    pub blocks: BlockSection,
    pub issues: IssueTotals,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub duration_ms: Option<u64>,
}

impl ReplayReport {
    /// Pretty JSON with a trailing newline; equal reports give equal bytes.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub report: ReplayReport,
    /// State after ingesting the full range.
    pub state: CityState,
    /// Models fitted on the training part.
    pub models: BTreeMap<String, ForecastModel>,
    pub boundary: Option<DateTime<Utc>>,
}

fn batches(events: &[Event], registry: &PostRegistry) -> (crate::ingest::PostStreamBatch<RadarReading>, crate::ingest::PostStreamBatch<PedestrianCount>) {
    let radar = events.iter().filter_map(|e| match e {
        Event::Radar(r) => Some(r.clone()),
        _ => None,
    });
    let peds = events.iter().filter_map(|e| match e {
        Event::Pedestrian(p) => Some(p.clone()),
        _ => None,
    });
    (segregate_by_post(radar, registry).batch, segregate_by_post(peds, registry).batch)
}

/// Run the full pipeline. `boundary` defaults to the start of the month
/// after the first event; an explicit boundary must lie in the data range.
pub fn run_replay(dataset: &Dataset, boundary: Option<DateTime<Utc>>) -> Result<ReplayOutput, ReplayError> {
    let config = &dataset.config;
    let registry = &dataset.registry;
    let mut state = CityState::new(config.clone(), registry.clone());

    for (i, r) in dataset.rules.iter().enumerate() {
        let cmd = Command::RulePut { rule_id: RuleId(i as u64 + 1), name: r.name.clone(), text: r.text.clone(), enabled: r.enabled };
        state.apply(&cmd).map_err(|e| ReplayError::Data { file: RULES_FILE.into(), line: None, message: e.to_string() })?;
    }
    for (file, feed) in [(RADAR_FILE, &dataset.radar), (PEDESTRIANS_FILE, &dataset.pedestrians), (DETECTIONS_FILE, &dataset.detections)] {
        for (i, (raw, event)) in feed.iter().enumerate() {
            state.apply(&Command::Ingest { raw: raw.clone(), event: event.clone() }).map_err(|e| ReplayError::Data {
                file: file.into(),
                line: Some(i + 1),
                message: e.to_string(),
            })?;
        }
    }

    // train / holdout on the movement feeds
    let sensor: Vec<Event> = dataset.radar.iter().chain(&dataset.pedestrians).map(|(_, e)| e.clone()).collect();
    let range = dataset.time_range();
    let explicit = boundary.is_some();
    let boundary = match (boundary, range) {
        (Some(b), _) => Some(b),
        (None, Some((first, _))) => Some(next_month_start(first, config)),
        (None, None) => None,
    };
    let mut forecast = ForecastSection { boundary, streets: Vec::new(), skipped: Vec::new() };
    let mut models = BTreeMap::new();
    if let Some(b) = boundary {
        let (train, holdout) = match split_train_holdout(&sensor, b) {
            Ok(parts) => parts,
            Err(e) if explicit => return Err(e),
            // a default boundary past the data leaves nothing to score
            Err(_) => (sensor.clone(), Vec::new()),
        };
        let (train_radar, train_peds) = batches(&train, registry);
        let (hold_radar, hold_peds) = batches(&holdout, registry);
        for street in registry.streets() {
            let train_series = build_movement_series(street, &train_radar, &train_peds, registry);
            let holdout_series = build_movement_series(street, &hold_radar, &hold_peds, registry);
            let fitted = preprocess_series(&train_series, config).and_then(|s| fit_model(&s, config));
            let outcome = fitted.and_then(|m| evaluate(&m, &holdout_series, config).map(|e| (m, e)));
            match outcome {
                Ok((model, eval)) => {
                    forecast.streets.push(StreetMetrics {
                        street_id: street.to_string(),
                        n_train: model.n_train,
                        mae: eval.mae,
                        mape: eval.mape,
                        n: eval.n,
                    });
                    models.insert(street.to_string(), model);
                }
                Err(e) => forecast.skipped.push(SkippedStreet { street_id: street.to_string(), reason: e.to_string() }),
            }
        }
    }

    // safety over the full range
    let rule_names: BTreeMap<RuleId, &str> = state.rules().map(|r| (r.rule_id, r.name.as_str())).collect();
    let mut violations = ViolationTotals {
        total: state.violations().len(),
        by_severity: [Severity::Warning, Severity::Danger].into_iter().map(|s| (s, 0)).collect(),
        by_rule: rule_names.values().map(|n| (n.to_string(), 0)).collect(),
    };
    for v in state.violations() {
        *violations.by_severity.entry(v.severity).or_default() += 1;
        *violations.by_rule.entry(rule_names[&v.rule_id].to_string()).or_default() += 1;
    }

    // observed blocks and what dimming them would save
    let mut blocks = BlockSection { dim_level: config.dim_level, total: BlockTotals::default(), by_street: BTreeMap::new() };
    for street in registry.streets() {
        let recs = state
            .recommendations(street, None, BlockBasis::Observed, config.dim_level)
            .expect("registered street");
        let t = BlockTotals {
            count: recs.len(),
            hours: recs.iter().map(|r| r.block.hours as u64).sum(),
            estimated_savings_kwh: recs.iter().map(|r| r.estimated_savings_kwh).sum(),
        };
        blocks.total.count += t.count;
        blocks.total.hours += t.hours;
        blocks.total.estimated_savings_kwh += t.estimated_savings_kwh;
        blocks.by_street.insert(street.to_string(), t);
    }

    let mut issues = IssueTotals {
        total: state.issues().len(),
        detections: state.issues().accepted(),
        by_class: DetectionClass::ALL.into_iter().map(|c| (c, 0)).collect(),
        by_urgency: [Urgency::Routine, Urgency::Elevated, Urgency::Urgent].into_iter().map(|u| (u, 0)).collect(),
    };
    for i in state.issues().iter() {
        *issues.by_class.entry(i.class).or_default() += 1;
        *issues.by_urgency.entry(i.urgency).or_default() += 1;
    }

    let report = ReplayReport {
        dataset: DatasetSummary {
            sha256: dataset.sha256.clone(),
            first: range.map(|r| r.0),
            last: range.map(|r| r.1),
            radar: dataset.radar.len(),
            pedestrians: dataset.pedestrians.len(),
            detections: dataset.detections.len(),
            quarantined: state.dead_letter().len(),
        },
        forecast,
        violations,
        blocks,
        issues,
        duration_ms: None,
    };
    Ok(ReplayOutput { report, state, models, boundary })
}

/// Machine-readable data behind the dashboard views: hourly speeding
/// ratios, observed blocks, the day-after-boundary forecast against what
/// happened, dimming what-ifs and the issue map.
pub fn figures(out: &ReplayOutput) -> Value {
    let state = &out.state;
    let config = &state.config;
    let mut streets = serde_json::Map::new();
    for street in state.registry.streets() {
        let ratio = state.time_range().and_then(|(a, b)| {
            hourly_speeding_ratio(
                street,
                config.local_date(a),
                config.local_date(b),
                state.window_features(),
                &state.registry,
                config.speeding_ratio_threshold,
                config.timezone,
            )
            .ok()
        });
        let blocks = state.blocks(street, None, BlockBasis::Observed).expect("registered street");
        let forecast = out.models.get(street).zip(out.boundary).map(|(m, b)| {
            let f = forecast_24h(m, b, config);
            let actual = state.movement_series(street).slice(b, b + chrono::Duration::hours(24));
            json!({"forecast": f, "actual": actual.points})
        });
        let whatif: Vec<Value> = [0.3, 0.5]
            .into_iter()
            .map(|level| {
                let recs = state.recommendations(street, None, BlockBasis::Observed, level).expect("registered street");
                json!({"dim_level": level, "total_savings_kwh": recs.iter().map(|r| r.estimated_savings_kwh).sum::<f64>()})
            })
            .collect();
        streets.insert(
            street.to_string(),
            json!({"ratio": ratio, "blocks": blocks, "forecast": forecast, "whatif": whatif}),
        );
    }
    json!({"streets": streets, "issues": state.issues().to_geojson()})
}
