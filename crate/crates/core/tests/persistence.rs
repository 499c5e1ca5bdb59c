mod common;

use std::io::Write;

use common::mixed_batches;
use icms::replay::{generate, Generated, Profile};
use icms::service::{Command, EventLog, LogError, Service, ServiceError, WriteError};
use icms::PostRegistry;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data() -> Generated {
    generate(21, &Profile { streets: 2, posts_per_street: 2, months: 1, ..Profile::default() }).unwrap()
}

fn open(data: &Generated, dir: &std::path::Path) -> Result<Service, ServiceError> {
    Service::open(data.config.clone(), PostRegistry::new(data.posts.clone()).unwrap(), dir).map(|(s, _)| s)
}

fn populate(data: &Generated, dir: &std::path::Path, events: usize) -> String {
    let service = open(data, dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for batch in mixed_batches(&mut rng, data, events) {
        let _ = service.execute(&batch);
    }
    service.snapshot().export()
}

#[test]
fn restart_reproduces_state() {
    let data = data();
    let dir = tempfile::tempdir().unwrap();
    let before = populate(&data, dir.path(), 3000);
    let after = open(&data, dir.path()).unwrap().snapshot().export();
    assert_eq!(before, after);
    assert!(before.contains("\"models\": {\n    \"street-a\""), "training ran");
}

#[test]
fn torn_tail_is_dropped() {
    let data = data();
    let dir = tempfile::tempdir().unwrap();
    let before = populate(&data, dir.path(), 500);
    let path = dir.path().join(icms::service::log::LOG_FILE);
    std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"seq\":99999,\"kind\":\"rad").unwrap();

    let (service, recovered) =
        Service::open(data.config.clone(), PostRegistry::new(data.posts.clone()).unwrap(), dir.path()).unwrap();
    assert_eq!(recovered.truncated_bytes, 24);
    assert_eq!(service.snapshot().export(), before);
    // the next write lands on a clean line
    let rule_id = service.snapshot().next_rule_id();
    service
        .execute(&[Command::RulePut { rule_id, name: "late".into(), text: "vehicle_count > 9 -> danger".into(), enabled: true }])
        .unwrap();
    let seq = service.snapshot().last_seq;
    drop(service);
    let (log, again) = EventLog::open(dir.path()).unwrap();
    assert_eq!(again.truncated_bytes, 0);
    assert_eq!(log.next_seq(), seq + 1);
}

#[test]
fn corrupt_middle_refuses_to_start() {
    let data = data();
    let dir = tempfile::tempdir().unwrap();
    populate(&data, dir.path(), 200);
    let path = dir.path().join(icms::service::log::LOG_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"seq\": 4, oops";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    match open(&data, dir.path()) {
        Err(ServiceError::Log(LogError::Corrupt { seq, line, .. })) => assert_eq!((seq, line), (4, 4)),
        other => panic!("expected corruption, got {other:?}"),
    }
}

#[test]
fn rejected_batch_writes_nothing() {
    let data = data();
    let dir = tempfile::tempdir().unwrap();
    let service = open(&data, dir.path()).unwrap();
    let path = dir.path().join(icms::service::log::LOG_FILE);
    let event = icms::ingest::Event::Radar(data.radar[0].clone());
    let batch = [
        Command::Ingest { raw: event.to_wire(), event },
        Command::IssueAcknowledge { issue_id: icms::maintenance::IssueId(1) },
    ];
    match service.execute(&batch) {
        Err(WriteError::Rejected { index: 1, .. }) => {}
        other => panic!("expected rejection, got {other:?}"),
    }
    assert_eq!(std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), 0);
    assert_eq!(service.snapshot().last_seq, 0);
    assert!(service.snapshot().radar().is_empty());
}

#[test]
fn unreplayable_record_names_its_sequence() {
    let data = data();
    let dir = tempfile::tempdir().unwrap();
    {
        let (mut log, _) = EventLog::open(dir.path()).unwrap();
        let event = icms::ingest::Event::Radar(data.radar[0].clone());
        let good = Command::Ingest { raw: event.to_wire(), event };
        log.append([(good.kind().to_string(), good.payload())], chrono::Utc::now()).unwrap();
        log.append([("rule_delete".to_string(), serde_json::json!({"rule_id": 7}))], chrono::Utc::now()).unwrap();
    }
    match open(&data, dir.path()) {
        Err(ServiceError::Replay { seq, .. }) => assert_eq!(seq, 2),
        other => panic!("expected replay failure, got {other:?}"),
    }
}
