mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;

use common::{oracle_savings, oracle_windows};
use icms::energy::BlockBasis;
use icms::replay::{generate, generate_dataset, run_replay, Dataset, Profile};
use icms::PostRegistry;
use serde_json::Value;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/replay_seed42.json");

fn icms(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_icms")).args(args).output().unwrap()
}

#[test]
fn golden_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let g = icms(&["generate", "--seed", "42", "--out", out.to_str().unwrap()]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    let r = icms(&["replay", "--data", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let golden = std::fs::read_to_string(GOLDEN).unwrap();
    assert_eq!(String::from_utf8(r.stdout).unwrap(), golden);
}

/// Recompute the golden figures without the engines.
#[test]
fn golden_agrees_with_oracles() {
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(GOLDEN).unwrap()).unwrap();
    let data = generate(42, &Profile::default()).unwrap();
    let registry = PostRegistry::new(data.posts.clone()).unwrap();
    let tz = data.config.timezone;

    let ds = &golden["dataset"];
    assert_eq!(ds["radar"], data.radar.len());
    assert_eq!(ds["pedestrians"], data.pedestrians.len());
    assert_eq!(ds["detections"], data.detections.len());
    assert_eq!(ds["quarantined"], data.truth.stray_readings);
    assert_eq!(golden["forecast"]["boundary"], "2023-03-31T23:00:00Z");

    let windows = oracle_windows(&data.radar, &data.pedestrians, &registry, 15, tz);
    let near = windows.values().filter(|w| w.2 >= 1 && w.3 >= 1).count();
    let fast = windows.values().filter(|w| w.1 > 0 && w.0 / w.1 as f64 > 45.0).count();
    let busy = windows
        .iter()
        .filter(|((_, ts), w)| {
            let h = data.config.local_hour(*ts);
            !(5..23).contains(&h) && w.1 >= 2
        })
        .count();
    let by_rule = &golden["violations"]["by_rule"];
    assert_eq!(by_rule["speeding near pedestrians"], near);
    assert_eq!(by_rule["fast traffic"], fast);
    assert_eq!(by_rule["busy night"], busy);
    assert_eq!(by_rule["crowded corner"], 0);
    assert_eq!(golden["violations"]["by_severity"]["danger"], near);
    assert_eq!(golden["violations"]["total"], near + fast + busy);

    let blocks = &golden["blocks"];
    assert_eq!(blocks["total"]["count"], data.truth.zero_blocks.len());
    let mut total = 0.0;
    for street in registry.streets() {
        let planted: Vec<_> = data.truth.zero_blocks.iter().filter(|b| b.street_id == street).collect();
        let posts: Vec<_> = registry.posts_on_street(street).cloned().collect();
        let kwh: f64 = planted.iter().map(|b| oracle_savings(b.hours, &posts, 0.3)).sum();
        let s = &blocks["by_street"][street];
        assert_eq!(s["count"], planted.len());
        assert_eq!(s["hours"], planted.iter().map(|b| b.hours).sum::<u32>());
        assert!((s["estimated_savings_kwh"].as_f64().unwrap() - kwh).abs() < 1e-9);
        total += kwh;
    }
    assert!((blocks["total"]["estimated_savings_kwh"].as_f64().unwrap() - total).abs() < 1e-9);

    let issues = &golden["issues"];
    assert_eq!(issues["total"], data.truth.detection_clusters.len());
    let mut urgencies: BTreeMap<String, usize> = BTreeMap::new();
    for c in &data.truth.detection_clusters {
        *urgencies.entry(serde_json::to_value(c.urgency).unwrap().as_str().unwrap().to_string()).or_default() += 1;
    }
    for (band, n) in urgencies {
        assert_eq!(issues["by_urgency"][&band], n);
    }

    for s in golden["forecast"]["streets"].as_array().unwrap() {
        // hourly noise of σ = 2 bounds the mean absolute error well below 3
        assert!(s["mae"].as_f64().unwrap() < 3.0);
        assert_eq!(s["n"], 720);
    }
}

#[test]
fn replay_recovers_planted_structure() {
    let dir = tempfile::tempdir().unwrap();
    let profile = Profile { noise: 0.0, ..Profile::default() };
    let truth = generate_dataset(8, &profile, dir.path()).unwrap();
    let dataset = Dataset::load(dir.path(), None).unwrap();
    let out = run_replay(&dataset, None).unwrap();

    for s in &out.report.forecast.streets {
        assert_eq!(s.mae, 0.0, "{}", s.street_id);
    }
    let mut found = Vec::new();
    for street in out.state.registry.streets() {
        found.extend(out.state.blocks(street, None, BlockBasis::Observed).unwrap());
    }
    let key = |b: &icms::energy::ActivityBlock| (b.street_id.clone(), b.start);
    found.sort_by_key(key);
    let mut planted = truth.zero_blocks.clone();
    planted.sort_by_key(key);
    assert_eq!(found, planted);

    let speeding: BTreeSet<(String, chrono::DateTime<chrono::Utc>)> =
        out.state.window_features().iter().filter(|w| w.speeding_count > 0).map(|w| (w.post_id.clone(), w.window_start)).collect();
    assert_eq!(speeding, truth.speeding_windows.iter().cloned().collect());

    let issues = out.state.issues();
    assert_eq!(issues.len(), truth.detection_clusters.len());
    for cluster in &truth.detection_clusters {
        let issue = issues
            .iter()
            .filter(|i| i.class == cluster.class)
            .min_by(|a, b| icms::haversine_m(a.location, cluster.center).total_cmp(&icms::haversine_m(b.location, cluster.center)))
            .unwrap();
        assert_eq!(issue.detection_count, cluster.detections);
        assert_eq!(issue.max_confidence, cluster.max_confidence);
        assert_eq!(issue.urgency, cluster.urgency);
    }
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    generate_dataset(1, &Profile { streets: 1, posts_per_street: 1, months: 1, ..Profile::default() }, &ds).unwrap();
    let path = ds.to_str().unwrap();

    let ok = icms(&["report", "--data", path]);
    assert!(ok.status.success());
    let figures: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert!(figures["issues"]["features"].is_array());

    let early = icms(&["replay", "--data", path, "--boundary", "2020-01-01T00:00:00Z"]);
    assert_eq!(early.status.code(), Some(2));

    write(&ds, "config.json", r#"{"cadence": 7}"#);
    assert_eq!(icms(&["replay", "--data", path]).status.code(), Some(3));
    std::fs::remove_file(ds.join("config.json")).unwrap();

    let radar = std::fs::read_to_string(ds.join("radar.jsonl")).unwrap();
    write(&ds, "radar.jsonl", &format!("{radar}{{\"post_id\": 3}}\n"));
    let bad = icms(&["replay", "--data", path]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("radar.jsonl:"));

    assert_eq!(icms(&["generate", "--out", path, "--streets", "0"]).status.code(), Some(2));
}
