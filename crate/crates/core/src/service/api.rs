use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::state::{Applied, Command, StateError, TrainRange};
use super::{Service, WriteError};
use crate::energy::BlockBasis;
use crate::ingest::{parse_batch, FeedKind, LineError};
use crate::maintenance::{DetectionClass, IssueFilter, IssueId, IssueStatus, Urgency};
use crate::safety::{frequency_level, hourly_speeding_ratio, RatioError, RuleError, RuleErrorKind, RuleId, Violation};

/// Which engines expose routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Engines {
    pub safety: bool,
    pub energy: bool,
    pub maintenance: bool,
}

impl Default for Engines {
    fn default() -> Self {
        Engines { safety: true, energy: true, maintenance: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorLocation {
    pub line: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub location: Option<ErrorLocation>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), location: None }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "VALIDATION", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"code": self.code, "message": self.message});
        if let Some(loc) = self.location {
            body["location"] = serde_json::to_value(loc).expect("location serializes");
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<RuleError> for ApiError {
    fn from(e: RuleError) -> Self {
        let code = match e.kind {
            RuleErrorKind::Syntax => "RULE_SYNTAX",
            RuleErrorKind::UnknownIdentifier => "RULE_UNKNOWN_IDENTIFIER",
            RuleErrorKind::DepthExceeded => "RULE_TOO_DEEP",
        };
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code,
            message: e.message.clone(),
            location: Some(ErrorLocation { line: e.line, column: Some(e.column) }),
        }
    }
}

impl From<StateError> for ApiError {
    fn from(e: StateError) -> Self {
        match e {
            StateError::NotFound(m) => ApiError::not_found(m),
            StateError::Validation(m) => ApiError::validation(m),
            StateError::IllegalTransition(m) => ApiError::new(StatusCode::CONFLICT, "STATE", m),
            StateError::Rule(r) => r.into(),
        }
    }
}

impl From<WriteError> for ApiError {
    fn from(e: WriteError) -> Self {
        match e {
            WriteError::Rejected { error, .. } => error.into(),
            WriteError::Storage(e) => {
                tracing::error!(error = %e, "event log write failed");
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "STORAGE", e.to_string())
            }
        }
    }
}

impl From<LineError> for ApiError {
    fn from(e: LineError) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "VALIDATION",
            message: e.error.to_string(),
            location: Some(ErrorLocation { line: e.line, column: None }),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Query string parameters, rejected if any name is not expected.
struct Params(BTreeMap<String, String>);

impl<S: Send + Sync> FromRequestParts<S> for Params {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        Query::<BTreeMap<String, String>>::try_from_uri(&parts.uri)
            .map(|Query(q)| Params(q))
            .map_err(|e| ApiError::validation(e.body_text()))
    }
}

impl Params {
    fn only(&self, allowed: &[&str]) -> ApiResult<&Self> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(ApiError::validation(format!("unknown query parameter {k:?}; expected one of {allowed:?}"))),
            None => Ok(self),
        }
    }

    fn opt<T: FromStr>(&self, name: &str) -> ApiResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(name)
            .map(|v| v.parse::<T>().map_err(|e| ApiError::validation(format!("parameter {name}={v:?}: {e}"))))
            .transpose()
    }

    fn req<T: FromStr>(&self, name: &str) -> ApiResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(name)?.ok_or_else(|| ApiError::validation(format!("missing query parameter {name}")))
    }
}

fn json_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        code: "VALIDATION",
        message: format!("invalid JSON body: {e}"),
        location: Some(ErrorLocation { line: e.line(), column: Some(e.column()) }),
    })
}

fn id_param(raw: &str, what: &str) -> ApiResult<u64> {
    raw.parse().map_err(|_| ApiError::validation(format!("{what} id must be a positive integer, got {raw:?}")))
}

type Svc = State<Arc<Service>>;

pub fn router(service: Arc<Service>, engines: Engines) -> Router {
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/posts", get(posts))
        .route("/config", get(config));
    if engines.safety || engines.energy {
        app = app
            .route("/ingest/radar", post(|s: Svc, b: Bytes| ingest(s, FeedKind::Radar, b)))
            .route("/ingest/pedestrians", post(|s: Svc, b: Bytes| ingest(s, FeedKind::Pedestrian, b)));
    }
    if engines.safety {
        app = app
            .route("/rules", get(list_rules).post(create_rule))
            .route("/rules/{id}", get(get_rule).put(put_rule).delete(delete_rule))
            .route("/violations", get(violations))
            .route("/safety/ratio", get(ratio));
    }
    if engines.energy {
        app = app
            .route("/energy/forecast", get(forecast))
            .route("/energy/blocks", get(blocks))
            .route("/energy/recommendations", get(recommendations))
            .route("/energy/train", post(train));
    }
    if engines.maintenance {
        app = app
            .route("/ingest/detections", post(|s: Svc, b: Bytes| ingest(s, FeedKind::Detection, b)))
            .route("/issues", get(issues))
            .route("/issues.geojson", get(issues_geojson))
            .route("/issues/{id}/acknowledge", post(|s: Svc, p: Path<String>| transition(s, p, true)))
            .route("/issues/{id}/resolve", post(|s: Svc, p: Path<String>| transition(s, p, false)));
    }
    let flags = engines;
    app.fallback(|| async { ApiError::not_found("no such route") })
        .with_state(service)
        .layer(axum::Extension(flags))
}

async fn health(State(svc): Svc, axum::Extension(engines): axum::Extension<Engines>) -> Json<Value> {
    let s = svc.snapshot();
    Json(json!({
        "status": "ok",
        "last_seq": s.last_seq,
        "engines": {"safety": engines.safety, "energy": engines.energy, "maintenance": engines.maintenance},
    }))
}

async fn posts(State(svc): Svc) -> Json<Value> {
    Json(json!(svc.snapshot().registry.posts().collect::<Vec<_>>()))
}

async fn config(State(svc): Svc) -> Json<Value> {
    Json(json!(svc.snapshot().config))
}

async fn ingest(State(svc): Svc, kind: FeedKind, body: Bytes) -> ApiResult<Json<Value>> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::validation(format!("body is not UTF-8: {e}")))?;
    let commands: Vec<Command> =
        parse_batch(kind, text)?.into_iter().map(|(raw, event)| Command::Ingest { raw, event }).collect();
    let applied = svc.execute(&commands)?;
    let quarantined = applied.iter().filter(|a| matches!(a, Applied::Reading { quarantined: true })).count();
    let mut out = json!({"accepted": applied.len() - quarantined, "quarantined": quarantined});
    if kind == FeedKind::Detection {
        let issues: Vec<Value> = applied
            .iter()
            .filter_map(|a| match a {
                Applied::Detection { issue_id, outcome } => Some(json!({"issue_id": issue_id, "outcome": outcome})),
                _ => None,
            })
            .collect();
        out["issues"] = json!(issues);
    }
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleBody {
    name: String,
    text: String,
    #[serde(default = "yes")]
    enabled: bool,
}

fn yes() -> bool {
    true
}

async fn list_rules(State(svc): Svc) -> Json<Value> {
    Json(json!(svc.snapshot().rules().collect::<Vec<_>>()))
}

fn applied_rule(applied: Vec<Applied>) -> Json<Value> {
    match applied.into_iter().next() {
        Some(Applied::RulePut(rule)) => Json(json!(rule)),
        other => unreachable!("rule write produced {other:?}"),
    }
}

async fn create_rule(State(svc): Svc, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let b: RuleBody = json_body(&body)?;
    crate::safety::parse_rule(&b.text)?;
    let applied = svc.execute_with(|s| {
        Ok(vec![Command::RulePut { rule_id: s.next_rule_id(), name: b.name, text: b.text, enabled: b.enabled }])
    })?;
    Ok((StatusCode::CREATED, applied_rule(applied)))
}

async fn get_rule(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = RuleId(id_param(&id, "rule")?);
    svc.snapshot().rule(id).map(|r| Json(json!(r))).ok_or_else(|| ApiError::not_found(format!("rule {id} not found")))
}

async fn put_rule(State(svc): Svc, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let rule_id = RuleId(id_param(&id, "rule")?);
    let b: RuleBody = json_body(&body)?;
    crate::safety::parse_rule(&b.text)?;
    let applied = svc.execute_with(|s| match s.rule(rule_id) {
        Some(_) => Ok(vec![Command::RulePut { rule_id, name: b.name, text: b.text, enabled: b.enabled }]),
        None => Err(StateError::NotFound(format!("rule {rule_id} not found"))),
    })?;
    Ok(applied_rule(applied))
}

async fn delete_rule(State(svc): Svc, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let rule_id = RuleId(id_param(&id, "rule")?);
    svc.execute(&[Command::RuleDelete { rule_id }])?;
    Ok(StatusCode::NO_CONTENT)
}

async fn violations(State(svc): Svc, params: Params) -> ApiResult<Json<Value>> {
    params.only(&["post_id", "from", "to"])?;
    let post_id: Option<String> = params.opt("post_id")?;
    let from: Option<DateTime<Utc>> = params.opt("from")?;
    let to: Option<DateTime<Utc>> = params.opt("to")?;
    let s = svc.snapshot();
    if let Some(p) = &post_id {
        if !s.registry.contains(p) {
            return Err(ApiError::not_found(format!("unknown post {p:?}")));
        }
    }
    let selected: Vec<&Violation> = s
        .violations()
        .iter()
        .filter(|v| post_id.as_ref().is_none_or(|p| &v.post_id == p))
        .filter(|v| from.is_none_or(|f| v.window_start >= f) && to.is_none_or(|t| v.window_start < t))
        .collect();

    let mut by_severity: BTreeMap<String, usize> = BTreeMap::new();
    for v in &selected {
        *by_severity.entry(v.severity.to_string()).or_default() += 1;
    }
    let frequency: Vec<Value> = match to.or(s.time_range().map(|r| r.1)) {
        Some(now) => {
            let pairs: std::collections::BTreeSet<(&str, RuleId)> =
                selected.iter().map(|v| (v.post_id.as_str(), v.rule_id)).collect();
            pairs
                .into_iter()
                .map(|(p, r)| json!(frequency_level(s.violations(), p, r, now, &s.config)))
                .collect()
        }
        None => Vec::new(),
    };
    Ok(Json(json!({
        "count": selected.len(),
        "by_severity": by_severity,
        "violations": selected,
        "frequency": frequency,
    })))
}

async fn ratio(State(svc): Svc, params: Params) -> ApiResult<Json<Value>> {
    params.only(&["street_id", "from", "to", "threshold"])?;
    let s = svc.snapshot();
    let street_id: String = params.req("street_id")?;
    let range = s.time_range().map(|(a, b)| (s.config.local_date(a), s.config.local_date(b)));
    let from: NaiveDate = match params.opt("from")? {
        Some(d) => d,
        None => range.map(|r| r.0).unwrap_or_default(),
    };
    let to: NaiveDate = match params.opt("to")? {
        Some(d) => d,
        None => range.map(|r| r.1).unwrap_or_default(),
    };
    let threshold: f64 = params.opt("threshold")?.unwrap_or(s.config.speeding_ratio_threshold);
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(ApiError::validation("threshold must be a nonnegative number"));
    }
    let r = hourly_speeding_ratio(&street_id, from, to, s.window_features(), &s.registry, threshold, s.config.timezone)
        .map_err(|e| match e {
            RatioError::UnknownStreet(_) => ApiError::not_found(e.to_string()),
            RatioError::EmptyRange { .. } => ApiError::validation(e.to_string()),
        })?;
    Ok(Json(json!(r)))
}

async fn forecast(State(svc): Svc, params: Params) -> ApiResult<Json<Value>> {
    params.only(&["street_id", "from"])?;
    let street_id: String = params.req("street_id")?;
    let from: Option<DateTime<Utc>> = params.opt("from")?;
    Ok(Json(json!(svc.snapshot().forecast(&street_id, from)?)))
}

async fn blocks(State(svc): Svc, params: Params) -> ApiResult<Json<Value>> {
    params.only(&["street_id", "date", "basis"])?;
    let street_id: String = params.req("street_id")?;
    let date: Option<NaiveDate> = params.opt("date")?;
    let basis: BlockBasis = params.opt("basis")?.unwrap_or(BlockBasis::Observed);
    let blocks = svc.snapshot().blocks(&street_id, date, basis)?;
    Ok(Json(json!({"street_id": street_id, "date": date, "basis": basis, "blocks": blocks})))
}

async fn recommendations(State(svc): Svc, params: Params) -> ApiResult<Json<Value>> {
    params.only(&["street_id", "date", "basis", "dim_level"])?;
    let s = svc.snapshot();
    let street_id: String = params.req("street_id")?;
    let date: Option<NaiveDate> = params.opt("date")?;
    let basis: BlockBasis = params.opt("basis")?.unwrap_or(BlockBasis::Observed);
    let dim_level: f64 = params.opt("dim_level")?.unwrap_or(s.config.dim_level);
    let recs = s.recommendations(&street_id, date, basis, dim_level)?;
    let total: f64 = recs.iter().map(|r| r.estimated_savings_kwh).sum();
    Ok(Json(json!({
        "street_id": street_id,
        "date": date,
        "basis": basis,
        "dim_level": dim_level,
        "recommendations": recs,
        "total_savings_kwh": total,
    })))
}

async fn train(State(svc): Svc, body: Bytes) -> ApiResult<Json<Value>> {
    let range: TrainRange = if body.iter().all(u8::is_ascii_whitespace) { TrainRange::default() } else { json_body(&body)? };
    match svc.execute(&[Command::Train { from: range.from, to: range.to }])?.pop() {
        Some(Applied::Trained(summary)) => Ok(Json(json!(summary))),
        other => unreachable!("train produced {other:?}"),
    }
}

async fn issues(State(svc): Svc, params: Params) -> ApiResult<Json<Value>> {
    params.only(&["status", "class", "min_urgency"])?;
    let filter = IssueFilter {
        status: params.opt::<IssueStatus>("status")?,
        class: params.opt::<DetectionClass>("class")?,
        min_urgency: params.opt::<Urgency>("min_urgency")?,
    };
    Ok(Json(json!(svc.snapshot().issues().list_issues(&filter))))
}

async fn issues_geojson(State(svc): Svc) -> Json<Value> {
    Json(svc.snapshot().issues().to_geojson())
}

async fn transition(State(svc): Svc, Path(id): Path<String>, acknowledge: bool) -> ApiResult<Json<Value>> {
    let issue_id = IssueId(id_param(&id, "issue")?);
    let cmd = if acknowledge { Command::IssueAcknowledge { issue_id } } else { Command::IssueResolve { issue_id } };
    match svc.execute(&[cmd])?.pop() {
        Some(Applied::Issue(issue)) => Ok(Json(json!(issue))),
        other => unreachable!("transition produced {other:?}"),
    }
}
