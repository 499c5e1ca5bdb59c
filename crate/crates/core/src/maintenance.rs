//! Infrastructure issue registry fed by confidence-scored detections.
//!
//! Detections of the same class within the dedup radius of a live issue
//! merge into it; everything else opens a new issue. Urgency follows the
//! highest confidence seen. The registry is a single-writer state machine.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use crate::ingest::{DetectionClass, DetectionEvent};
use crate::model::{haversine_m, Config, GeoPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IssueId(pub u64);

impl fmt::Display for IssueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueStatus {
    Open,
    Acknowledged,
    Resolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Urgency {
    Routine,
    Elevated,
    Urgent,
}

impl std::str::FromStr for Urgency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "routine" => Ok(Urgency::Routine),
            "elevated" => Ok(Urgency::Elevated),
            "urgent" => Ok(Urgency::Urgent),
            other => Err(format!("unknown urgency {other:?}")),
        }
    }
}

impl std::str::FromStr for IssueStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "open" => Ok(IssueStatus::Open),
            "acknowledged" => Ok(IssueStatus::Acknowledged),
            "resolved" => Ok(IssueStatus::Resolved),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

/// Lower cut inclusive: `c < cuts[0]` is routine, `c >= cuts[1]` urgent.
pub fn urgency_band(confidence: f64, cuts: [f64; 2]) -> Urgency {
    if confidence < cuts[0] {
        Urgency::Routine
    } else if confidence < cuts[1] {
        Urgency::Elevated
    } else {
        Urgency::Urgent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceIssue {
    pub issue_id: IssueId,
    pub class: DetectionClass,
    /// Where the issue was first detected.
    pub location: GeoPoint,
    pub max_confidence: f64,
    pub detection_count: u64,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub status: IssueStatus,
    pub urgency: Urgency,
    pub image_refs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestOutcome {
    Created,
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueAction {
    Acknowledge,
    Resolve,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("confidence must lie in [0, 1], got {0}")]
    InvalidConfidence(f64),
    #[error("invalid location: {0}")]
    InvalidLocation(String),
    #[error("issue {0} not found")]
    NotFound(IssueId),
    #[error("cannot {action:?} issue {id} in status {status:?}")]
    IllegalTransition { id: IssueId, status: IssueStatus, action: IssueAction },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IssueFilter {
    pub status: Option<IssueStatus>,
    pub class: Option<DetectionClass>,
    pub min_urgency: Option<Urgency>,
}

impl IssueFilter {
    pub fn matches(&self, issue: &MaintenanceIssue) -> bool {
        self.status.is_none_or(|s| issue.status == s)
            && self.class.is_none_or(|c| issue.class == c)
            && self.min_urgency.is_none_or(|u| issue.urgency >= u)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IssueRegistry {
    issues: BTreeMap<IssueId, MaintenanceIssue>,
    next_id: u64,
    accepted: u64,
}

impl IssueRegistry {
    pub fn new() -> Self {
        IssueRegistry::default()
    }

    pub fn get(&self, id: IssueId) -> Option<&MaintenanceIssue> {
        self.issues.get(&id)
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    /// Issues in id order.
    pub fn iter(&self) -> impl Iterator<Item = &MaintenanceIssue> {
        self.issues.values()
    }

    /// Detections accepted so far.
    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    /// Merge into the nearest live issue of the same class within the
    /// dedup radius (ties: oldest, then lowest id), or open a new issue.
    pub fn ingest_detection(
        &mut self,
        event: &DetectionEvent,
        config: &Config,
    ) -> Result<(IssueId, IngestOutcome), RegistryError> {
        if !(0.0..=1.0).contains(&event.confidence) {
            return Err(RegistryError::InvalidConfidence(event.confidence));
        }
        event.location.check().map_err(|e| RegistryError::InvalidLocation(e.to_string()))?;

        let target = self
            .issues
            .values()
            .filter(|i| i.class == event.class && i.status != IssueStatus::Resolved)
            .map(|i| (haversine_m(i.location, event.location), i))
            .filter(|(d, _)| *d <= config.dedup_radius_m)
            .min_by(|(da, a), (db, b)| {
                da.total_cmp(db).then(a.first_seen.cmp(&b.first_seen)).then(a.issue_id.cmp(&b.issue_id))
            })
            .map(|(_, i)| i.issue_id);

        self.accepted += 1;
        match target {
            Some(id) => {
                let issue = self.issues.get_mut(&id).expect("id from live map");
                issue.max_confidence = issue.max_confidence.max(event.confidence);
                issue.urgency = urgency_band(issue.max_confidence, config.urgency_cuts);
                issue.detection_count += 1;
                issue.first_seen = issue.first_seen.min(event.timestamp);
                issue.last_seen = issue.last_seen.max(event.timestamp);
                issue.image_refs.extend(event.image_ref.iter().cloned());
                Ok((id, IngestOutcome::Merged))
            }
            None => {
                self.next_id += 1;
                let id = IssueId(self.next_id);
                self.issues.insert(
                    id,
                    MaintenanceIssue {
                        issue_id: id,
                        class: event.class,
                        location: event.location,
                        max_confidence: event.confidence,
                        detection_count: 1,
                        first_seen: event.timestamp,
                        last_seen: event.timestamp,
                        status: IssueStatus::Open,
                        urgency: urgency_band(event.confidence, config.urgency_cuts),
                        image_refs: event.image_ref.iter().cloned().collect(),
                    },
                );
                Ok((id, IngestOutcome::Created))
            }
        }
    }

    /// Advance an issue along open → acknowledged → resolved.
    pub fn transition(&mut self, id: IssueId, action: IssueAction) -> Result<&MaintenanceIssue, RegistryError> {
        let issue = self.issues.get_mut(&id).ok_or(RegistryError::NotFound(id))?;
        issue.status = match (issue.status, action) {
            (IssueStatus::Open, IssueAction::Acknowledge) => IssueStatus::Acknowledged,
            (IssueStatus::Acknowledged, IssueAction::Resolve) => IssueStatus::Resolved,
            (status, action) => return Err(RegistryError::IllegalTransition { id, status, action }),
        };
        Ok(issue)
    }

    /// Matching issues, most pressing first: urgency, then confidence,
    /// then most recent sighting.
    pub fn list_issues(&self, filter: &IssueFilter) -> Vec<&MaintenanceIssue> {
        let mut out: Vec<&MaintenanceIssue> = self.issues.values().filter(|i| filter.matches(i)).collect();
        out.sort_by(|a, b| {
            b.urgency
                .cmp(&a.urgency)
                .then(b.max_confidence.total_cmp(&a.max_confidence))
                .then(b.last_seen.cmp(&a.last_seen))
                .then(a.issue_id.cmp(&b.issue_id))
        });
        out
    }

    /// One JSON object per issue, id order.
    pub fn export_jsonl(&self) -> String {
        let mut out = String::new();
        for issue in self.issues.values() {
            out.push_str(&serde_json::to_string(issue).expect("issue serializes"));
            out.push('\n');
        }
        out
    }

    /// Point features for every issue.
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .issues
            .values()
            .map(|i| {
                json!({
                    "type": "Feature",
                    "id": i.issue_id,
                    "geometry": {"type": "Point", "coordinates": [i.location.lon, i.location.lat]},
                    "properties": {
                        "class": i.class,
                        "urgency": i.urgency,
                        "max_confidence": i.max_confidence,
                        "status": i.status,
                    },
                })
            })
            .collect();
        json!({"type": "FeatureCollection", "features": features})
    }
}
