//! Feed detections into the issue registry, walk an issue through its
//! lifecycle and export the map layer.
//!
//! cargo run --example maintenance_issues

use icms::ingest::{parse_batch, Event, FeedKind};
use icms::maintenance::{IssueAction, IssueFilter, IssueRegistry, Urgency};
use icms::Config;

const DETECTIONS: &str = r#"
{"source_id":"bus-3","ts":"2023-03-02T09:12:00Z","class":"pothole","confidence":0.41,"lat":40.64050,"lon":-8.65380,"image_ref":"f/1.jpg"}
{"source_id":"bus-5","ts":"2023-03-02T11:40:00Z","class":"pothole","confidence":0.37,"lat":40.64055,"lon":-8.65382}
{"source_id":"bus-3","ts":"2023-03-03T08:02:00Z","class":"flood","confidence":0.66,"lat":40.64100,"lon":-8.65000}
{"source_id":"cam-12","ts":"2023-03-03T22:15:00Z","class":"fire","confidence":0.93,"lat":40.63000,"lon":-8.66000}
"#;

fn main() -> anyhow::Result<()> {
    let config = Config::default();
    let mut registry = IssueRegistry::new();
    for (_, ev) in parse_batch(FeedKind::Detection, DETECTIONS)? {
        let Event::Detection(d) = ev else { continue };
        let (id, outcome) = registry.ingest_detection(&d, &config)?;
        println!("{} {:.2} -> issue {id} ({outcome:?})", d.class.as_str(), d.confidence);
    }

    for issue in registry.list_issues(&IssueFilter::default()) {
        println!(
            "#{} {:?} {:?} max {:.2} seen {}x",
            issue.issue_id, issue.class, issue.urgency, issue.max_confidence, issue.detection_count
        );
    }

    let pressing = registry.list_issues(&IssueFilter { min_urgency: Some(Urgency::Elevated), ..Default::default() });
    let first = pressing[0].issue_id;
    registry.transition(first, IssueAction::Acknowledge)?;
    registry.transition(first, IssueAction::Resolve)?;
    if let Err(e) = registry.transition(first, IssueAction::Resolve) {
        println!("second resolve: {e}");
    }

    println!("{}", serde_json::to_string_pretty(&registry.to_geojson())?);
    Ok(())
}
