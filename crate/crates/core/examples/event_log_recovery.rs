//! Append to the event log, simulate a crash mid-write and recover.
//!
//! cargo run --example event_log_recovery

use std::io::Write;

use chrono::Utc;
use icms::service::{EventLog, LogError};
use serde_json::json;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let (mut log, _) = EventLog::open(dir.path())?;
    for i in 0..3 {
        let recs = log.append([("pedestrian".to_string(), json!({"post_id": "p1", "ts": "2023-03-01T10:00:00Z", "count": i}))], Utc::now())?;
        println!("appended seq {}", recs[0].seq);
    }
    let path = log.path().to_path_buf();
    drop(log);

    // half a record, as if the process died during the write
    std::fs::OpenOptions::new().append(true).open(&path)?.write_all(br#"{"seq":4,"kind":"pedes"#)?;
    let (log, recovered) = EventLog::open(dir.path())?;
    println!("recovered {} records, cut {} torn bytes, next seq {}", recovered.records.len(), recovered.truncated_bytes, log.next_seq());
    drop(log);

    // damage in the middle is not silently skipped
    let text = std::fs::read_to_string(&path)?;
    std::fs::write(&path, text.replacen("\"seq\":2", "\"seq\":7", 1))?;
    match EventLog::open(dir.path()) {
        Err(e @ LogError::Corrupt { .. }) => println!("refused: {e}"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
