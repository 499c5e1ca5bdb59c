//! Feed parsing, vehicle-class filtering and per-post segregation.
//!
//! Feeds are JSON Lines, one object per line:
//!
//! ```text
//! radar       {"post_id", "ts", "class", "speed_kmh"}
//! pedestrian  {"post_id", "ts", "count"}
//! detection   {"source_id", "ts", "class", "confidence", "lat", "lon", "image_ref"?}
//! ```
//!
//! HTTP batches may also be sent as a single JSON array of the same objects.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::model::{GeoPoint, PostRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedKind {
    Radar,
    Pedestrian,
    Detection,
}

impl fmt::Display for FeedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedKind::Radar => "radar",
            FeedKind::Pedestrian => "pedestrian",
            FeedKind::Detection => "detection",
        })
    }
}

impl FromStr for FeedKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "radar" => Ok(FeedKind::Radar),
            "pedestrian" | "pedestrians" => Ok(FeedKind::Pedestrian),
            "detection" | "detections" => Ok(FeedKind::Detection),
            other => Err(format!("unknown feed kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    LightVehicle,
    HeavyVehicle,
    Other,
}

impl ObjectClass {
    /// Anything the radar reports beyond the two vehicle classes is `Other`.
    pub fn from_wire(s: &str) -> Self {
        match s {
            "light_vehicle" => ObjectClass::LightVehicle,
            "heavy_vehicle" => ObjectClass::HeavyVehicle,
            _ => ObjectClass::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::LightVehicle => "light_vehicle",
            ObjectClass::HeavyVehicle => "heavy_vehicle",
            ObjectClass::Other => "other",
        }
    }

    pub fn is_vehicle(self) -> bool {
        matches!(self, ObjectClass::LightVehicle | ObjectClass::HeavyVehicle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarReading {
    pub post_id: String,
    pub timestamp: DateTime<Utc>,
    pub object_class: ObjectClass,
    /// km/h
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PedestrianCount {
    pub post_id: String,
    pub timestamp: DateTime<Utc>,
    /// Pedestrians observed since the post's previous reading.
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionClass {
    Pothole,
    Flood,
    Fire,
}

impl DetectionClass {
    pub const ALL: [DetectionClass; 3] = [DetectionClass::Pothole, DetectionClass::Flood, DetectionClass::Fire];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectionClass::Pothole => "pothole",
            DetectionClass::Flood => "flood",
            DetectionClass::Fire => "fire",
        }
    }
}

impl FromStr for DetectionClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pothole" => Ok(DetectionClass::Pothole),
            "flood" => Ok(DetectionClass::Flood),
            "fire" => Ok(DetectionClass::Fire),
            other => Err(format!("unknown detection class {other:?}")),
        }
    }
}

/// A confidence-scored sighting reported by a mobile or fixed camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub source_id: String,
    pub timestamp: DateTime<Utc>,
    pub class: DetectionClass,
    pub confidence: f64,
    pub location: GeoPoint,
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Radar(RadarReading),
    Pedestrian(PedestrianCount),
    Detection(DetectionEvent),
}

impl Event {
    pub fn kind(&self) -> FeedKind {
        match self {
            Event::Radar(_) => FeedKind::Radar,
            Event::Pedestrian(_) => FeedKind::Pedestrian,
            Event::Detection(_) => FeedKind::Detection,
        }
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        match self {
            Event::Radar(r) => r.timestamp,
            Event::Pedestrian(p) => p.timestamp,
            Event::Detection(d) => d.timestamp,
        }
    }

    /// The feed-format object for this event.
    pub fn to_wire(&self) -> Value {
        match self {
            Event::Radar(r) => r.to_wire(),
            Event::Pedestrian(p) => p.to_wire(),
            Event::Detection(d) => d.to_wire(),
        }
    }
}

fn ts_string(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl RadarReading {
    pub fn to_wire(&self) -> Value {
        json!({
            "post_id": self.post_id,
            "ts": ts_string(self.timestamp),
            "class": self.object_class.as_str(),
            "speed_kmh": self.speed,
        })
    }
}

impl PedestrianCount {
    pub fn to_wire(&self) -> Value {
        json!({"post_id": self.post_id, "ts": ts_string(self.timestamp), "count": self.count})
    }
}

impl DetectionEvent {
    pub fn to_wire(&self) -> Value {
        let mut v = json!({
            "source_id": self.source_id,
            "ts": ts_string(self.timestamp),
            "class": self.class.as_str(),
            "confidence": self.confidence,
            "lat": self.location.lat,
            "lon": self.location.lon,
        });
        if let Some(r) = &self.image_ref {
            v["image_ref"] = Value::String(r.clone());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("missing required field {0:?}")]
    MissingField(&'static str),
    #[error("field {field:?} must be {expected}")]
    WrongType { field: &'static str, expected: &'static str },
    #[error("{message}")]
    Invalid { field: &'static str, message: String },
}

/// A parse failure located at a 1-based line of a multi-record body.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {error}")]
pub struct LineError {
    pub line: usize,
    pub error: ParseError,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let prefix: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    prefix + column.saturating_sub(1)
}

fn malformed(text: &str, e: serde_json::Error) -> ParseError {
    ParseError::Malformed { offset: byte_offset(text, e.line(), e.column()), message: e.to_string() }
}

struct Fields<'a>(&'a Map<String, Value>);

impl<'a> Fields<'a> {
    fn get(&self, field: &'static str) -> Result<&'a Value, ParseError> {
        match self.0.get(field) {
            None | Some(Value::Null) => Err(ParseError::MissingField(field)),
            Some(v) => Ok(v),
        }
    }

    fn string(&self, field: &'static str) -> Result<&'a str, ParseError> {
        self.get(field)?.as_str().ok_or(ParseError::WrongType { field, expected: "a string" })
    }

    fn number(&self, field: &'static str) -> Result<f64, ParseError> {
        let v = self.get(field)?.as_f64().ok_or(ParseError::WrongType { field, expected: "a number" })?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ParseError::Invalid { field, message: format!("{field} must be finite") })
        }
    }

    fn timestamp(&self, field: &'static str) -> Result<DateTime<Utc>, ParseError> {
        let s = self.string(field)?;
        let ts = DateTime::parse_from_rfc3339(s).map_err(|_| ParseError::Invalid {
            field,
            message: format!("{field} must be an RFC 3339 instant, got {s:?}"),
        })?;
        Ok(ts.with_timezone(&Utc).with_nanosecond(0).expect("zero nanoseconds is valid"))
    }

    fn optional_string(&self, field: &'static str) -> Result<Option<String>, ParseError> {
        match self.0.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(ParseError::WrongType { field, expected: "a string" }),
        }
    }
}

fn parse_radar(f: Fields<'_>) -> Result<RadarReading, ParseError> {
    let post_id = f.string("post_id")?.to_string();
    let timestamp = f.timestamp("ts")?;
    let object_class = ObjectClass::from_wire(f.string("class")?);
    let speed = f.number("speed_kmh")?;
    if speed < 0.0 {
        return Err(ParseError::Invalid { field: "speed_kmh", message: "speed_kmh must be ≥ 0".into() });
    }
    Ok(RadarReading { post_id, timestamp, object_class, speed })
}

fn parse_pedestrian(f: Fields<'_>) -> Result<PedestrianCount, ParseError> {
    let post_id = f.string("post_id")?.to_string();
    let timestamp = f.timestamp("ts")?;
    let raw = f.get("count")?;
    let count = match (raw.as_u64(), raw.as_i64()) {
        (Some(c), _) => c,
        (None, Some(_)) => {
            return Err(ParseError::Invalid { field: "count", message: "count must be ≥ 0".into() })
        }
        _ => return Err(ParseError::WrongType { field: "count", expected: "an integer" }),
    };
    Ok(PedestrianCount { post_id, timestamp, count })
}

fn parse_detection(f: Fields<'_>) -> Result<DetectionEvent, ParseError> {
    let source_id = f.string("source_id")?.to_string();
    let timestamp = f.timestamp("ts")?;
    let class = f
        .string("class")?
        .parse()
        .map_err(|message| ParseError::Invalid { field: "class", message })?;
    let confidence = f.number("confidence")?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(ParseError::Invalid {
            field: "confidence",
            message: format!("confidence must lie in [0, 1], got {confidence}"),
        });
    }
    let (lat, lon) = (f.number("lat")?, f.number("lon")?);
    let location = GeoPoint::new(lat, lon).map_err(|e| ParseError::Invalid {
        field: if matches!(e, crate::model::InvalidCoordinate::Latitude(_)) { "lat" } else { "lon" },
        message: e.to_string(),
    })?;
    let image_ref = f.optional_string("image_ref")?;
    Ok(DetectionEvent { source_id, timestamp, class, confidence, location, image_ref })
}

/// Decode an already-parsed JSON object into an event of `kind`.
pub fn parse_value(kind: FeedKind, value: &Value) -> Result<Event, ParseError> {
    let obj = value.as_object().ok_or(ParseError::Malformed {
        offset: 0,
        message: "expected a JSON object".into(),
    })?;
    let f = Fields(obj);
    Ok(match kind {
        FeedKind::Radar => Event::Radar(parse_radar(f)?),
        FeedKind::Pedestrian => Event::Pedestrian(parse_pedestrian(f)?),
        FeedKind::Detection => Event::Detection(parse_detection(f)?),
    })
}

/// Parse one feed line into a validated event.
pub fn parse_record(kind: FeedKind, line: &str) -> Result<Event, ParseError> {
    let value: Value = serde_json::from_str(line).map_err(|e| malformed(line, e))?;
    parse_value(kind, &value)
}

/// Parse a batch body: either JSON Lines or one JSON array of objects.
/// Returns each event with its original JSON object.
pub fn parse_batch(kind: FeedKind, body: &str) -> Result<Vec<(Value, Event)>, LineError> {
    if body.trim_start().starts_with('[') {
        let items: Vec<Value> =
            serde_json::from_str(body).map_err(|e| LineError { line: e.line(), error: malformed(body, e) })?;
        return items
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let ev = parse_value(kind, &v).map_err(|error| LineError { line: i + 1, error })?;
                Ok((v, ev))
            })
            .collect();
    }
    let mut out = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(line).map_err(|e| LineError { line: i + 1, error: malformed(line, e) })?;
        let ev = parse_value(kind, &value).map_err(|error| LineError { line: i + 1, error })?;
        out.push((value, ev));
    }
    Ok(out)
}

/// Keep only light and heavy vehicles, preserving order.
pub fn filter_vehicle_classes(readings: &[RadarReading]) -> Vec<RadarReading> {
    readings.iter().filter(|r| r.object_class.is_vehicle()).cloned().collect()
}

/// Events that belong to exactly one smart post.
pub trait PostEvent {
    fn post_id(&self) -> &str;
    fn timestamp(&self) -> DateTime<Utc>;
}

impl PostEvent for RadarReading {
    fn post_id(&self) -> &str {
        &self.post_id
    }
    fn timestamp(&self) -> DateTime<Utc> {
        self.timestamp
    }
}

impl PostEvent for PedestrianCount {
    fn post_id(&self) -> &str {
        &self.post_id
    }
    fn timestamp(&self) -> DateTime<Utc> {
        self.timestamp
    }
}

/// Radar or pedestrian reading, for segregating mixed feeds.
#[derive(Debug, Clone, PartialEq)]
pub enum SensorEvent {
    Radar(RadarReading),
    Pedestrian(PedestrianCount),
}

impl PostEvent for SensorEvent {
    fn post_id(&self) -> &str {
        match self {
            SensorEvent::Radar(r) => &r.post_id,
            SensorEvent::Pedestrian(p) => &p.post_id,
        }
    }
    fn timestamp(&self) -> DateTime<Utc> {
        match self {
            SensorEvent::Radar(r) => r.timestamp,
            SensorEvent::Pedestrian(p) => p.timestamp,
        }
    }
}

/// Per-post, time-ordered event lists.
#[derive(Debug, Clone, PartialEq)]
pub struct PostStreamBatch<E> {
    pub streams: BTreeMap<String, Vec<E>>,
}

impl<E> Default for PostStreamBatch<E> {
    fn default() -> Self {
        PostStreamBatch { streams: BTreeMap::new() }
    }
}

impl<E> PostStreamBatch<E> {
    pub fn get(&self, post_id: &str) -> &[E] {
        self.streams.get(post_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn total(&self) -> usize {
        self.streams.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segregated<E> {
    pub batch: PostStreamBatch<E>,
    /// Events whose post_id is not in the registry.
    pub dead_letter: Vec<E>,
}

/// Group events by post, each stream stably sorted by timestamp. Events
/// for unknown posts are quarantined in `dead_letter`.
pub fn segregate_by_post<E: PostEvent>(
    events: impl IntoIterator<Item = E>,
    registry: &PostRegistry,
) -> Segregated<E> {
    let mut batch = PostStreamBatch::default();
    let mut dead_letter = Vec::new();
    for ev in events {
        if registry.contains(ev.post_id()) {
            batch.streams.entry(ev.post_id().to_string()).or_insert_with(Vec::new).push(ev);
        } else {
            dead_letter.push(ev);
        }
    }
    for stream in batch.streams.values_mut() {
        stream.sort_by_key(|e| e.timestamp());
    }
    Segregated { batch, dead_letter }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SmartPost;

    fn radar(class: &str) -> String {
        format!(r#"{{"post_id":"p1","ts":"2023-03-01T10:00:00Z","class":"{class}","speed_kmh":52.0}}"#)
    }

    #[test]
    fn parses_radar() {
        let Event::Radar(r) = parse_record(FeedKind::Radar, &radar("light_vehicle")).unwrap() else {
            panic!("wrong kind")
        };
        assert_eq!(r.post_id, "p1");
        assert_eq!(r.object_class, ObjectClass::LightVehicle);
        assert_eq!(r.speed, 52.0);
        assert_eq!(r.timestamp.to_rfc3339(), "2023-03-01T10:00:00+00:00");
    }

    #[test]
    fn unrecognized_class_maps_to_other() {
        let Event::Radar(r) = parse_record(FeedKind::Radar, &radar("bicycle")).unwrap() else {
            panic!("wrong kind")
        };
        assert_eq!(r.object_class, ObjectClass::Other);
    }

    #[test]
    fn negative_count_is_rejected() {
        let err = parse_record(FeedKind::Pedestrian, r#"{"post_id":"p1","ts":"2023-03-01T10:00:00Z","count":-3}"#)
            .unwrap_err();
        assert_eq!(err.to_string(), "count must be ≥ 0");
    }

    #[test]
    fn negative_speed_is_rejected() {
        let line = r#"{"post_id":"p1","ts":"2023-03-01T10:00:00Z","class":"heavy_vehicle","speed_kmh":-1}"#;
        assert!(matches!(parse_record(FeedKind::Radar, line), Err(ParseError::Invalid { field: "speed_kmh", .. })));
    }

    #[test]
    fn missing_field_is_named() {
        let err = parse_record(FeedKind::Radar, r#"{"post_id":"p1","ts":"2023-03-01T10:00:00Z","class":"x"}"#)
            .unwrap_err();
        assert_eq!(err, ParseError::MissingField("speed_kmh"));
    }

    #[test]
    fn malformed_json_reports_offset() {
        let err = parse_record(FeedKind::Radar, r#"{"post_id": "p1",, }"#).unwrap_err();
        let ParseError::Malformed { offset, .. } = err else { panic!("{err:?}") };
        assert_eq!(offset, 17);
    }

    #[test]
    fn detection_confidence_range() {
        let ok = r#"{"source_id":"bus7","ts":"2023-03-01T10:00:00Z","class":"pothole","confidence":0.41,"lat":40.64,"lon":-8.65}"#;
        let Event::Detection(d) = parse_record(FeedKind::Detection, ok).unwrap() else { panic!() };
        assert_eq!(d.confidence, 0.41);
        assert_eq!(d.image_ref, None);
        let bad = ok.replace("0.41", "1.2");
        assert!(matches!(
            parse_record(FeedKind::Detection, &bad),
            Err(ParseError::Invalid { field: "confidence", .. })
        ));
        let bad_class = ok.replace("pothole", "graffiti");
        assert!(parse_record(FeedKind::Detection, &bad_class).is_err());
    }

    #[test]
    fn batch_accepts_array_and_jsonl() {
        let a = radar("light_vehicle");
        let b = radar("heavy_vehicle");
        let jsonl = format!("{a}\n\n{b}\n");
        let arr = format!("[{a},{b}]");
        assert_eq!(parse_batch(FeedKind::Radar, &jsonl).unwrap().len(), 2);
        assert_eq!(parse_batch(FeedKind::Radar, &arr).unwrap().len(), 2);
        let err = parse_batch(FeedKind::Radar, &format!("{a}\n{{oops")).unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn wire_roundtrip() {
        let ev = parse_record(FeedKind::Radar, &radar("heavy_vehicle")).unwrap();
        let again = parse_value(FeedKind::Radar, &ev.to_wire()).unwrap();
        assert_eq!(ev, again);
    }

    fn reading(class: ObjectClass) -> RadarReading {
        RadarReading { post_id: "p1".into(), timestamp: Utc::now(), object_class: class, speed: 30.0 }
    }

    #[test]
    fn filter_keeps_vehicles_in_order() {
        assert!(filter_vehicle_classes(&[]).is_empty());
        let input = [
            reading(ObjectClass::LightVehicle),
            reading(ObjectClass::Other),
            reading(ObjectClass::HeavyVehicle),
        ];
        let out = filter_vehicle_classes(&input);
        let classes: Vec<_> = out.iter().map(|r| r.object_class).collect();
        assert_eq!(classes, [ObjectClass::LightVehicle, ObjectClass::HeavyVehicle]);
    }

    fn registry() -> PostRegistry {
        let post = |id: &str| SmartPost {
            post_id: id.into(),
            street_id: "s1".into(),
            location: GeoPoint { lat: 40.0, lon: -8.0 },
            speed_limit: 50,
            lamp_count: 1,
            lamp_wattage: 80.0,
            dimmable: true,
        };
        PostRegistry::new([post("p1"), post("p2")]).unwrap()
    }

    #[test]
    fn segregation_quarantines_unknown_posts() {
        let t0 = "2023-03-01T10:00:00Z".parse::<DateTime<Utc>>().unwrap();
        let ev = |post: &str, secs: i64| PedestrianCount {
            post_id: post.into(),
            timestamp: t0 + chrono::Duration::seconds(secs),
            count: secs as u64,
        };
        let out = segregate_by_post(vec![ev("p2", 5), ev("p1", 3), ev("zz", 1), ev("p2", 1)], &registry());
        assert_eq!(out.batch.get("p1").len(), 1);
        let p2: Vec<u64> = out.batch.get("p2").iter().map(|e| e.count).collect();
        assert_eq!(p2, [1, 5]);
        assert_eq!(out.dead_letter.len(), 1);

        let empty = segregate_by_post(Vec::<PedestrianCount>::new(), &registry());
        assert!(empty.batch.is_empty() && empty.dead_letter.is_empty());
    }
}
