//! The city state: everything the engines know, rebuilt by applying
//! commands in log order.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::energy::{
    build_movement_series, find_zero_blocks, fit_model, forecast_24h, night_of, preprocess_series, recommend,
    ActivityBlock, BlockBasis, DimmingRecommendation, Forecast, ForecastModel, MovementSeries, SeriesPoint,
};
use crate::energy::series::hour_floor;
use crate::ingest::{parse_value, Event, FeedKind, PedestrianCount, PostEvent, PostStreamBatch, RadarReading};
use crate::maintenance::{IngestOutcome, IssueAction, IssueId, IssueRegistry, MaintenanceIssue, RegistryError};
use crate::model::{local_midnight, Config, PostRegistry};
use crate::safety::{build_window_features, evaluate_windows, Rule, RuleError, RuleId, Violation, WindowFeatures};

/// A state change, as recorded in the event log.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Ingest { raw: Value, event: Event },
    RulePut { rule_id: RuleId, name: String, text: String, enabled: bool },
    RuleDelete { rule_id: RuleId },
    IssueAcknowledge { issue_id: IssueId },
    IssueResolve { issue_id: IssueId },
    Train { from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>> },
}

#[derive(Deserialize)]
struct RulePutPayload {
    rule_id: RuleId,
    name: String,
    text: String,
    enabled: bool,
}

#[derive(Deserialize)]
struct RuleRef {
    rule_id: RuleId,
}

#[derive(Deserialize)]
struct IssueRef {
    issue_id: IssueId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRange {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::Ingest { event: Event::Radar(_), .. } => "radar",
            Command::Ingest { event: Event::Pedestrian(_), .. } => "pedestrian",
            Command::Ingest { event: Event::Detection(_), .. } => "detection",
            Command::RulePut { .. } => "rule_put",
            Command::RuleDelete { .. } => "rule_delete",
            Command::IssueAcknowledge { .. } => "issue_acknowledge",
            Command::IssueResolve { .. } => "issue_resolve",
            Command::Train { .. } => "train",
        }
    }

    pub fn payload(&self) -> Value {
        match self {
            Command::Ingest { raw, .. } => raw.clone(),
            Command::RulePut { rule_id, name, text, enabled } => {
                json!({"rule_id": rule_id, "name": name, "text": text, "enabled": enabled})
            }
            Command::RuleDelete { rule_id } => json!({ "rule_id": rule_id }),
            Command::IssueAcknowledge { issue_id } | Command::IssueResolve { issue_id } => json!({ "issue_id": issue_id }),
            Command::Train { from, to } => serde_json::to_value(TrainRange { from: *from, to: *to }).expect("serializes"),
        }
    }

    /// Rebuild a command from a log record.
    pub fn from_record(kind: &str, payload: &Value) -> Result<Command, String> {
        fn de<T: serde::de::DeserializeOwned>(v: &Value) -> Result<T, String> {
            T::deserialize(v).map_err(|e| e.to_string())
        }
        let ingest = |k: FeedKind| {
            let event = parse_value(k, payload).map_err(|e| e.to_string())?;
            Ok(Command::Ingest { raw: payload.clone(), event })
        };
        match kind {
            "radar" => ingest(FeedKind::Radar),
            "pedestrian" => ingest(FeedKind::Pedestrian),
            "detection" => ingest(FeedKind::Detection),
            "rule_put" => {
                let p: RulePutPayload = de(payload)?;
                Ok(Command::RulePut { rule_id: p.rule_id, name: p.name, text: p.text, enabled: p.enabled })
            }
            "rule_delete" => Ok(Command::RuleDelete { rule_id: de::<RuleRef>(payload)?.rule_id }),
            "issue_acknowledge" => Ok(Command::IssueAcknowledge { issue_id: de::<IssueRef>(payload)?.issue_id }),
            "issue_resolve" => Ok(Command::IssueResolve { issue_id: de::<IssueRef>(payload)?.issue_id }),
            "train" => {
                let r: TrainRange = de(payload)?;
                Ok(Command::Train { from: r.from, to: r.to })
            }
            other => Err(format!("unknown record kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    IllegalTransition(String),
    #[error("{0}")]
    Rule(#[from] RuleError),
}

impl From<RegistryError> for StateError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::NotFound(_) => StateError::NotFound(e.to_string()),
            RegistryError::IllegalTransition { .. } => StateError::IllegalTransition(e.to_string()),
            _ => StateError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainedStreet {
    pub street_id: String,
    pub n_train: usize,
    pub residual_stdev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedStreet {
    pub street_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub trained: Vec<TrainedStreet>,
    pub skipped: Vec<SkippedStreet>,
}

/// Result of applying one command.
#[derive(Debug, Clone, PartialEq)]
pub enum Applied {
    /// Radar or pedestrian reading; `quarantined` when its post is unknown.
    Reading { quarantined: bool },
    Detection { issue_id: IssueId, outcome: IngestOutcome },
    RulePut(Rule),
    RuleDeleted(RuleId),
    Issue(MaintenanceIssue),
    Trained(TrainSummary),
}

// Cached derived views; a clone starts empty.
#[derive(Debug, Default)]
struct Derived {
    features: OnceLock<Vec<WindowFeatures>>,
    violations: OnceLock<Vec<Violation>>,
}

impl Clone for Derived {
    fn clone(&self) -> Self {
        Derived::default()
    }
}

#[derive(Debug, Clone)]
pub struct CityState {
    pub config: Config,
    pub registry: PostRegistry,
    radar: PostStreamBatch<RadarReading>,
    pedestrians: PostStreamBatch<PedestrianCount>,
    dead_letter: Vec<Event>,
    rules: BTreeMap<RuleId, Rule>,
    next_rule_id: u64,
    models: BTreeMap<String, ForecastModel>,
    issues: IssueRegistry,
    first_ts: Option<DateTime<Utc>>,
    last_ts: Option<DateTime<Utc>>,
    /// Sequence number of the last applied log record.
    pub last_seq: u64,
    derived: Derived,
}

fn insert_sorted<E: PostEvent>(batch: &mut PostStreamBatch<E>, ev: E) {
    let stream = batch.streams.entry(ev.post_id().to_string()).or_default();
    let ts = ev.timestamp();
    let idx = stream.partition_point(|e| e.timestamp() <= ts);
    stream.insert(idx, ev);
}

impl CityState {
    pub fn new(config: Config, registry: PostRegistry) -> Self {
        CityState {
            config,
            registry,
            radar: PostStreamBatch::default(),
            pedestrians: PostStreamBatch::default(),
            dead_letter: Vec::new(),
            rules: BTreeMap::new(),
            next_rule_id: 1,
            models: BTreeMap::new(),
            issues: IssueRegistry::new(),
            first_ts: None,
            last_ts: None,
            last_seq: 0,
            derived: Derived::default(),
        }
    }

    pub fn apply(&mut self, cmd: &Command) -> Result<Applied, StateError> {
        self.derived = Derived::default();
        match cmd {
            Command::Ingest { event, .. } => {
                let ts = event.timestamp();
                let applied = match event {
                    Event::Detection(d) => {
                        let (issue_id, outcome) = self.issues.ingest_detection(d, &self.config)?;
                        Applied::Detection { issue_id, outcome }
                    }
                    Event::Radar(r) if self.registry.contains(&r.post_id) => {
                        insert_sorted(&mut self.radar, r.clone());
                        Applied::Reading { quarantined: false }
                    }
                    Event::Pedestrian(p) if self.registry.contains(&p.post_id) => {
                        insert_sorted(&mut self.pedestrians, p.clone());
                        Applied::Reading { quarantined: false }
                    }
                    _ => {
                        self.dead_letter.push(event.clone());
                        Applied::Reading { quarantined: true }
                    }
                };
                self.first_ts = Some(self.first_ts.map_or(ts, |t| t.min(ts)));
                self.last_ts = Some(self.last_ts.map_or(ts, |t| t.max(ts)));
                Ok(applied)
            }
            Command::RulePut { rule_id, name, text, enabled } => {
                let rule = Rule::new(*rule_id, name.clone(), text.clone(), *enabled)?;
                self.next_rule_id = self.next_rule_id.max(rule_id.0 + 1);
                self.rules.insert(*rule_id, rule.clone());
                Ok(Applied::RulePut(rule))
            }
            Command::RuleDelete { rule_id } => match self.rules.remove(rule_id) {
                Some(_) => Ok(Applied::RuleDeleted(*rule_id)),
                None => Err(StateError::NotFound(format!("rule {rule_id} not found"))),
            },
            Command::IssueAcknowledge { issue_id } => {
                Ok(Applied::Issue(self.issues.transition(*issue_id, IssueAction::Acknowledge)?.clone()))
            }
            Command::IssueResolve { issue_id } => {
                Ok(Applied::Issue(self.issues.transition(*issue_id, IssueAction::Resolve)?.clone()))
            }
            Command::Train { from, to } => self.train(*from, *to).map(Applied::Trained),
        }
    }

    /// Fit one model per street on present hours in `[from, to)`; streets
    /// without enough data lose their model.
    fn train(&mut self, from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> Result<TrainSummary, StateError> {
        if let (Some(f), Some(t)) = (from, to) {
            if f >= t {
                return Err(StateError::Validation(format!("train range is empty: from {f} is not before to {t}")));
            }
        }
        let mut summary = TrainSummary { from, to, trained: Vec::new(), skipped: Vec::new() };
        let streets: Vec<String> = self.registry.streets().into_iter().map(String::from).collect();
        for street in streets {
            let mut series = self.movement_series(&street);
            series = series.slice(from.unwrap_or(DateTime::<Utc>::MIN_UTC), to.unwrap_or(DateTime::<Utc>::MAX_UTC));
            match preprocess_series(&series, &self.config).and_then(|s| fit_model(&s, &self.config)) {
                Ok(model) => {
                    summary.trained.push(TrainedStreet {
                        street_id: street.clone(),
                        n_train: model.n_train,
                        residual_stdev: model.residual_stdev,
                    });
                    self.models.insert(street, model);
                }
                Err(e) => {
                    summary.skipped.push(SkippedStreet { street_id: street.clone(), reason: e.to_string() });
                    self.models.remove(&street);
                }
            }
        }
        Ok(summary)
    }

    pub fn radar(&self) -> &PostStreamBatch<RadarReading> {
        &self.radar
    }

    pub fn pedestrians(&self) -> &PostStreamBatch<PedestrianCount> {
        &self.pedestrians
    }

    pub fn dead_letter(&self) -> &[Event] {
        &self.dead_letter
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.values()
    }

    pub fn rule(&self, id: RuleId) -> Option<&Rule> {
        self.rules.get(&id)
    }

    pub fn next_rule_id(&self) -> RuleId {
        RuleId(self.next_rule_id)
    }

    pub fn models(&self) -> &BTreeMap<String, ForecastModel> {
        &self.models
    }

    pub fn issues(&self) -> &IssueRegistry {
        &self.issues
    }

    /// Earliest and latest timestamps of all ingested events.
    pub fn time_range(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        self.first_ts.zip(self.last_ts)
    }

    pub fn window_features(&self) -> &[WindowFeatures] {
        self.derived.features.get_or_init(|| {
            build_window_features(&self.radar, &self.pedestrians, &self.registry, self.config.cadence, self.config.timezone)
        })
    }

    /// Every violation of the enabled rules over all windows.
    pub fn violations(&self) -> &[Violation] {
        self.derived.violations.get_or_init(|| evaluate_windows(self.rules.values(), self.window_features()))
    }

    fn known_street(&self, street_id: &str) -> Result<(), StateError> {
        if self.registry.has_street(street_id) {
            Ok(())
        } else {
            Err(StateError::NotFound(format!("unknown street {street_id:?}")))
        }
    }

    /// Raw hourly movement of a street.
    pub fn movement_series(&self, street_id: &str) -> MovementSeries {
        build_movement_series(street_id, &self.radar, &self.pedestrians, &self.registry)
    }

    fn model(&self, street_id: &str) -> Result<&ForecastModel, StateError> {
        self.known_street(street_id)?;
        self.models
            .get(street_id)
            .ok_or_else(|| StateError::NotFound(format!("no trained model for street {street_id:?}")))
    }

    /// First hour after the latest ingested event.
    pub fn default_forecast_start(&self) -> DateTime<Utc> {
        self.last_ts.map_or(DateTime::<Utc>::UNIX_EPOCH, |t| hour_floor(t) + Duration::hours(1))
    }

    pub fn forecast(&self, street_id: &str, from: Option<DateTime<Utc>>) -> Result<Forecast, StateError> {
        let model = self.model(street_id)?;
        Ok(forecast_24h(model, from.unwrap_or_else(|| self.default_forecast_start()), &self.config))
    }

    /// Zero-activity blocks of a street, optionally limited to one night.
    ///
    /// Observed blocks scan the raw hourly series. Forecast blocks scan the
    /// model's predictions for the night of `date`, or the next 24 hours.
    pub fn blocks(&self, street_id: &str, date: Option<NaiveDate>, basis: BlockBasis) -> Result<Vec<ActivityBlock>, StateError> {
        self.known_street(street_id)?;
        let cfg = &self.config;
        let tz = cfg.timezone;
        let points: Vec<SeriesPoint> = match basis {
            BlockBasis::Observed => {
                let series = self.movement_series(street_id);
                match date {
                    Some(d) => series.points.into_iter().filter(|p| night_of(p.ts, cfg.night_window, tz) == d).collect(),
                    None => series.points,
                }
            }
            BlockBasis::Forecast => {
                let model = self.model(street_id)?;
                match date {
                    Some(d) => {
                        let midnight = local_midnight(d, tz);
                        (0..48)
                            .map(|i| midnight + Duration::hours(i))
                            .filter(|&ts| night_of(ts, cfg.night_window, tz) == d)
                            .map(|ts| SeriesPoint { ts, count: Some(model.predict(ts, cfg).0) })
                            .collect()
                    }
                    None => forecast_24h(model, self.default_forecast_start(), cfg).as_series(),
                }
            }
        };
        Ok(find_zero_blocks(street_id, &points, basis, cfg.night_window, cfg.min_block_hours, tz))
    }

    pub fn recommendations(
        &self,
        street_id: &str,
        date: Option<NaiveDate>,
        basis: BlockBasis,
        dim_level: f64,
    ) -> Result<Vec<DimmingRecommendation>, StateError> {
        if !(0.0..=1.0).contains(&dim_level) {
            return Err(StateError::Validation(format!("dim_level must lie in [0, 1], got {dim_level}")));
        }
        let blocks = self.blocks(street_id, date, basis)?;
        let posts: Vec<_> = self.registry.posts_on_street(street_id).collect();
        Ok(recommend(&blocks, &posts, dim_level))
    }

    /// Canonical JSON of the full state. Equal states give equal bytes.
    pub fn export(&self) -> String {
        let wire = |events: &mut dyn Iterator<Item = Value>| events.collect::<Vec<_>>();
        let radar: BTreeMap<&str, Vec<Value>> = self
            .radar
            .streams
            .iter()
            .map(|(k, v)| (k.as_str(), wire(&mut v.iter().map(|r| r.to_wire()))))
            .collect();
        let pedestrians: BTreeMap<&str, Vec<Value>> = self
            .pedestrians
            .streams
            .iter()
            .map(|(k, v)| (k.as_str(), wire(&mut v.iter().map(|p| p.to_wire()))))
            .collect();
        let doc = json!({
            "last_seq": self.last_seq,
            "config": self.config,
            "posts": self.registry.posts().collect::<Vec<_>>(),
            "radar": radar,
            "pedestrians": pedestrians,
            "dead_letter": self.dead_letter.iter().map(Event::to_wire).collect::<Vec<_>>(),
            "rules": self.rules.values().collect::<Vec<_>>(),
            "next_rule_id": self.next_rule_id,
            "models": self.models,
            "issues": self.issues.iter().collect::<Vec<_>>(),
            "issues_accepted": self.issues.accepted(),
            "violations": self.violations(),
        });
        let mut out = serde_json::to_string_pretty(&doc).expect("state serializes");
        out.push('\n');
        out
    }
}
