//! Parse raw feeds, split them per smart post and build window features.
//!
//! cargo run --example ingest_feeds

use icms::ingest::{parse_batch, segregate_by_post, Event, FeedKind, SensorEvent};
use icms::safety::build_window_features;
use icms::{Config, GeoPoint, PostRegistry, SmartPost};

const RADAR: &str = r#"
{"post_id":"p1","ts":"2023-03-06T08:01:10Z","class":"light_vehicle","speed_kmh":48.0}
{"post_id":"p1","ts":"2023-03-06T08:03:55Z","class":"heavy_vehicle","speed_kmh":57.5}
{"post_id":"p1","ts":"2023-03-06T08:04:02Z","class":"bicycle","speed_kmh":18.0}
{"post_id":"p2","ts":"2023-03-06T08:16:40Z","class":"light_vehicle","speed_kmh":31.0}
{"post_id":"p9","ts":"2023-03-06T08:05:00Z","class":"light_vehicle","speed_kmh":44.0}
"#;

const PEDESTRIANS: &str = r#"[
  {"post_id":"p1","ts":"2023-03-06T08:00:00Z","count":3},
  {"post_id":"p2","ts":"2023-03-06T08:15:00Z","count":0}
]"#;

fn post(id: &str, limit: u32) -> SmartPost {
    SmartPost {
        post_id: id.into(),
        street_id: "rua-direita".into(),
        location: GeoPoint { lat: 40.6405, lon: -8.6538 },
        speed_limit: limit,
        lamp_count: 2,
        lamp_wattage: 80.0,
        dimmable: true,
    }
}

fn main() -> anyhow::Result<()> {
    let registry = PostRegistry::new([post("p1", 50), post("p2", 30)])?;
    let config = Config::default();

    let mut events = Vec::new();
    for (kind, body) in [(FeedKind::Radar, RADAR), (FeedKind::Pedestrian, PEDESTRIANS)] {
        for (_, ev) in parse_batch(kind, body)? {
            events.push(match ev {
                Event::Radar(r) => SensorEvent::Radar(r),
                Event::Pedestrian(p) => SensorEvent::Pedestrian(p),
                Event::Detection(_) => unreachable!(),
            });
        }
    }

    let split = segregate_by_post(events, &registry);
    for (post_id, stream) in &split.batch.streams {
        println!("{post_id}: {} events", stream.len());
    }
    println!("dead letter: {:?}", split.dead_letter);

    // the window builder wants one batch per feed
    let radar = segregate_by_post(
        split.batch.streams.values().flatten().filter_map(|e| match e {
            SensorEvent::Radar(r) => Some(r.clone()),
            _ => None,
        }),
        &registry,
    );
    let peds = segregate_by_post(
        split.batch.streams.values().flatten().filter_map(|e| match e {
            SensorEvent::Pedestrian(p) => Some(p.clone()),
            _ => None,
        }),
        &registry,
    );
    for w in build_window_features(&radar.batch, &peds.batch, &registry, config.cadence, config.timezone) {
        println!("{}", serde_json::to_string(&w)?);
    }

    // a bad line is reported with its position
    if let Err(e) = parse_batch(FeedKind::Pedestrian, "{\"post_id\":\"p1\",\"ts\":\"2023-03-06T08:00:00Z\",\"count\":-1}") {
        println!("rejected: {e}");
    }
    Ok(())
}
