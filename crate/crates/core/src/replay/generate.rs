//! Synthetic city datasets with planted structure.
//!
//! Each street follows a day-type × local-hour movement pattern. Optional
//! quiet nights force zero movement from 01:00 to 05:00 local time, short
//! speeding episodes are planted on single posts, and detection clusters
//! scatter repeated sightings around a few points. Everything planted is
//! written to `truth.json` next to the feeds.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Duration, Months, NaiveDate, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::energy::{ActivityBlock, BlockBasis};
use crate::ingest::{DetectionClass, DetectionEvent, ObjectClass, PedestrianCount, RadarReading};
use crate::maintenance::{urgency_band, Urgency};
use crate::model::{local_midnight, Config, DayType, GeoPoint, SmartPost};
use crate::safety::window_index;

pub const POSTS_FILE: &str = "posts.json";
pub const RADAR_FILE: &str = "radar.jsonl";
pub const PEDESTRIANS_FILE: &str = "pedestrians.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const RULES_FILE: &str = "rules.json";
pub const CONFIG_FILE: &str = "config.json";
pub const TRUTH_FILE: &str = "truth.json";

/// Readings for this post id are written but the post is not registered.
pub const STRAY_POST: &str = "unregistered-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Profile {
    pub streets: usize,
    pub posts_per_street: usize,
    /// First local day of the data.
    pub start: NaiveDate,
    pub months: u32,
    /// Standard deviation of hourly movement around the pattern.
    pub noise: f64,
    pub quiet_nights: bool,
    pub speeding_episodes: usize,
    pub detection_clusters: usize,
    pub stray_readings: usize,
}

impl Default for Profile {
    fn default() -> Self {
        Profile {
            streets: 3,
            posts_per_street: 4,
            start: NaiveDate::from_ymd_opt(2023, 3, 1).expect("valid date"),
            months: 2,
            noise: 2.0,
            quiet_nights: true,
            speeding_episodes: 8,
            detection_clusters: 3,
            stray_readings: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid profile: {0}")]
pub struct ProfileError(pub String);

impl Profile {
    pub fn check(&self) -> Result<(), ProfileError> {
        let err = |m: &str| Err(ProfileError(m.to_string()));
        if !(1..=26).contains(&self.streets) {
            return err("streets must be between 1 and 26");
        }
        if !(1..=50).contains(&self.posts_per_street) {
            return err("posts_per_street must be between 1 and 50");
        }
        if !(1..=24).contains(&self.months) {
            return err("months must be between 1 and 24");
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return err("noise must be a finite number ≥ 0");
        }
        if self.detection_clusters > 30 {
            return err("detection_clusters must be at most 30");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedingEpisode {
    pub post_id: String,
    pub start: DateTime<Utc>,
    pub hours: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTruth {
    pub class: DetectionClass,
    pub center: GeoPoint,
    pub detections: u64,
    pub max_confidence: f64,
    pub urgency: Urgency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub profile: Profile,
    pub zero_blocks: Vec<ActivityBlock>,
    pub speeding_episodes: Vec<SpeedingEpisode>,
    /// Every (post, window start) that received a speeding vehicle.
    pub speeding_windows: Vec<(String, DateTime<Utc>)>,
    pub detection_clusters: Vec<ClusterTruth>,
    pub stray_readings: usize,
}

/// Feeds and truth held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub config: Config,
    pub posts: Vec<SmartPost>,
    pub radar: Vec<RadarReading>,
    pub pedestrians: Vec<PedestrianCount>,
    pub detections: Vec<DetectionEvent>,
    pub rules: Value,
    pub truth: Truth,
}

const WORKDAY: [f64; 24] = [
    4.0, 2.0, 1.0, 1.0, 1.0, 3.0, 8.0, 20.0, 34.0, 30.0, 22.0, 20.0, 24.0, 26.0, 22.0, 22.0, 26.0, 34.0, 36.0, 28.0,
    18.0, 12.0, 8.0, 5.0,
];
const WEEKEND: [f64; 24] = [
    6.0, 4.0, 2.0, 1.0, 1.0, 2.0, 3.0, 6.0, 10.0, 16.0, 20.0, 22.0, 24.0, 22.0, 20.0, 20.0, 22.0, 22.0, 20.0, 16.0,
    12.0, 10.0, 8.0, 6.0,
];
const STREET_SCALE: [f64; 3] = [1.0, 0.6, 1.4];
const SPEED_LIMITS: [u32; 3] = [50, 30, 40];
const WATTAGE: [f64; 3] = [80.0, 60.0, 100.0];
const ORIGIN: GeoPoint = GeoPoint { lat: 40.6405, lon: -8.6538 };
const METERS_PER_DEG_LAT: f64 = 111_195.0;

fn is_quiet(hour: u32) -> bool {
    (1..5).contains(&hour)
}

/// Noise-free expected movement of street `i` at a local hour.
pub fn pattern(street: usize, day_type: DayType, hour: u32, quiet_nights: bool) -> f64 {
    if quiet_nights && is_quiet(hour) {
        return 0.0;
    }
    let base = match day_type {
        DayType::Workday => WORKDAY,
        DayType::Weekend => WEEKEND,
    };
    (base[hour as usize] * STREET_SCALE[street % 3]).round().max(1.0)
}

pub fn dataset_config() -> Config {
    Config {
        holidays: ["2023-04-07", "2023-04-25", "2023-06-10", "2023-12-25"]
            .iter()
            .map(|d| d.parse().expect("valid date"))
            .collect(),
        ..Config::default()
    }
}

fn default_rules() -> Value {
    json!([
        {"name": "speeding near pedestrians", "text": "speeding_count >= 1 AND pedestrian_count >= 1 -> danger", "enabled": true},
        {"name": "fast traffic", "text": "avg_speed > 45 -> warning", "enabled": true},
        {"name": "busy night", "text": "(hour_of_day >= 23 OR hour_of_day < 5) AND vehicle_count >= 2 -> warning", "enabled": true},
        {"name": "crowded corner", "text": "pedestrian_count > 12 -> warning", "enabled": false}
    ])
}

fn offset(p: GeoPoint, north_m: f64, east_m: f64) -> GeoPoint {
    GeoPoint {
        lat: p.lat + north_m / METERS_PER_DEG_LAT,
        lon: p.lon + east_m / (METERS_PER_DEG_LAT * p.lat.to_radians().cos()),
    }
}

/// Build a dataset in memory. Same seed and profile, same output.
pub fn generate(seed: u64, profile: &Profile) -> Result<Generated, ProfileError> {
    profile.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = dataset_config();
    let tz = config.timezone;

    let mut posts = Vec::new();
    for s in 0..profile.streets {
        for p in 0..profile.posts_per_street {
            posts.push(SmartPost {
                post_id: format!("s{}-p{}", s + 1, p + 1),
                street_id: format!("street-{}", (b'a' + s as u8) as char),
                location: offset(ORIGIN, 400.0 * s as f64, 40.0 * p as f64),
                speed_limit: SPEED_LIMITS[s % 3],
                lamp_count: 2,
                lamp_wattage: WATTAGE[s % 3],
                // one post of the second street cannot dim
                dimmable: !(s == 1 && p == 0),
            });
        }
    }

    let start = local_midnight(profile.start, tz);
    let end_date = profile.start.checked_add_months(Months::new(profile.months)).ok_or(ProfileError("date overflow".into()))?;
    let end = local_midnight(end_date, tz);
    let n_hours = (end - start).num_hours();

    // episodes on daytime hours of random posts
    let mut speeding_episodes = Vec::new();
    for _ in 0..profile.speeding_episodes {
        let post = &posts[rng.random_range(0..posts.len())];
        let day = rng.random_range(0..n_hours / 24);
        let local_hour = rng.random_range(8..18);
        let date = profile.start + Duration::days(day);
        let ts = local_midnight(date, tz) + Duration::hours(local_hour);
        speeding_episodes.push(SpeedingEpisode { post_id: post.post_id.clone(), start: ts, hours: rng.random_range(1..=2) });
    }
    let in_episode = |post_id: &str, ts: DateTime<Utc>| {
        speeding_episodes
            .iter()
            .any(|e| e.post_id == post_id && ts >= e.start && ts < e.start + Duration::hours(e.hours as i64))
    };

    let noise = Normal::new(0.0, profile.noise).expect("checked noise");
    let windows_per_hour = 60 / config.cadence as i64;
    let mut radar = Vec::new();
    let mut pedestrians = Vec::new();
    let mut speeding_windows = BTreeSet::new();
    let mut zero_blocks = Vec::new();

    for s in 0..profile.streets {
        let street_posts: Vec<&SmartPost> = posts[s * profile.posts_per_street..(s + 1) * profile.posts_per_street].iter().collect();
        let street_id = street_posts[0].street_id.clone();
        let mut run: Option<(DateTime<Utc>, u32)> = None;
        for h in 0..n_hours {
            let hour_ts = start + Duration::hours(h);
            let local_hour = hour_ts.with_timezone(&tz).hour();
            let expected = pattern(s, config.day_type_at(hour_ts), local_hour, profile.quiet_nights);
            let total = if expected == 0.0 {
                0
            } else {
                (expected + noise.sample(&mut rng)).round().max(1.0) as u64
            };

            if total == 0 {
                run = Some(run.map_or((hour_ts, 1), |(st, n)| (st, n + 1)));
            } else if let Some((st, n)) = run.take() {
                zero_blocks.push(ActivityBlock { street_id: street_id.clone(), start: st, hours: n, basis: BlockBasis::Observed });
            }

            let vehicles = (total as f64 * 0.6).round() as u64;
            for _ in 0..vehicles {
                let post = street_posts[rng.random_range(0..street_posts.len())];
                let ts = hour_ts + Duration::seconds(rng.random_range(0..3600));
                let roll: f64 = rng.random();
                let class = if roll < 0.85 {
                    ObjectClass::LightVehicle
                } else if roll < 0.95 {
                    ObjectClass::HeavyVehicle
                } else {
                    ObjectClass::Other
                };
                let limit = post.speed_limit as f64;
                let speed = if class == ObjectClass::Other {
                    rng.random_range(5.0..25.0)
                } else if in_episode(&post.post_id, ts) {
                    speeding_windows.insert((post.post_id.clone(), window_index(ts, config.cadence, tz)));
                    rng.random_range(limit + 5.0..limit + 30.0)
                } else {
                    rng.random_range(limit - 20.0..limit - 2.0)
                };
                let speed = (speed * 10.0).round() / 10.0;
                radar.push(RadarReading { post_id: post.post_id.clone(), timestamp: ts, object_class: class, speed });
            }

            // pedestrians: one count per post per window, even when zero
            let slots = street_posts.len() * windows_per_hour as usize;
            let mut counts = vec![0u64; slots];
            for _ in 0..total - vehicles {
                counts[rng.random_range(0..slots)] += 1;
            }
            for (i, count) in counts.into_iter().enumerate() {
                let post = street_posts[i % street_posts.len()];
                let w = (i / street_posts.len()) as i64;
                let ts = hour_ts + Duration::minutes(w * config.cadence as i64 + rng.random_range(0..config.cadence as i64));
                pedestrians.push(PedestrianCount { post_id: post.post_id.clone(), timestamp: ts, count });
            }
        }
        if let Some((st, n)) = run {
            zero_blocks.push(ActivityBlock { street_id, start: st, hours: n, basis: BlockBasis::Observed });
        }
    }

    for _ in 0..profile.stray_readings {
        let ts = start + Duration::seconds(rng.random_range(0..n_hours * 3600));
        radar.push(RadarReading { post_id: STRAY_POST.into(), timestamp: ts, object_class: ObjectClass::LightVehicle, speed: 42.0 });
    }

    let mut detections = Vec::new();
    let mut clusters = Vec::new();
    for c in 0..profile.detection_clusters {
        let class = DetectionClass::ALL[c % 3];
        // clusters sit 1.1 km apart so none can merge
        let center = offset(ORIGIN, -200.0, 1100.0 * c as f64);
        let n = rng.random_range(3..=6u64);
        let mut max_confidence: f64 = 0.0;
        for i in 0..n {
            let confidence = if c == 0 {
                // the first cluster peaks at exactly 0.41
                if i == 0 { 0.41 } else { (rng.random_range(0.2..0.41f64) * 100.0).round() / 100.0 }
            } else {
                (rng.random_range(0.3..0.95f64) * 100.0).round() / 100.0
            };
            max_confidence = max_confidence.max(confidence);
            let r = rng.random_range(0.0..8.0);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let location = offset(center, r * theta.sin(), r * theta.cos());
            let location = GeoPoint { lat: (location.lat * 1e7).round() / 1e7, lon: (location.lon * 1e7).round() / 1e7 };
            detections.push(DetectionEvent {
                source_id: format!("bus-{}", rng.random_range(1..=9)),
                timestamp: start + Duration::seconds(rng.random_range(0..n_hours * 3600)),
                class,
                confidence,
                location,
                image_ref: Some(format!("frames/c{c}-{i}.jpg")),
            });
        }
        clusters.push(ClusterTruth {
            class,
            center,
            detections: n,
            max_confidence,
            urgency: urgency_band(max_confidence, config.urgency_cuts),
        });
    }

    radar.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.post_id.cmp(&b.post_id)));
    pedestrians.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.post_id.cmp(&b.post_id)));
    detections.sort_by_key(|d| d.timestamp);

    let truth = Truth {
        seed,
        profile: profile.clone(),
        zero_blocks,
        speeding_episodes,
        speeding_windows: speeding_windows.into_iter().collect(),
        detection_clusters: clusters,
        stray_readings: profile.stray_readings,
    };
    Ok(Generated { config, posts, radar, pedestrians, detections, rules: default_rules(), truth })
}

fn jsonl(values: impl Iterator<Item = Value>) -> String {
    let mut out = String::new();
    for v in values {
        out.push_str(&serde_json::to_string(&v).expect("value serializes"));
        out.push('\n');
    }
    out
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

impl Generated {
    /// Write every file into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(POSTS_FILE), pretty(&self.posts))?;
        std::fs::write(dir.join(RADAR_FILE), jsonl(self.radar.iter().map(RadarReading::to_wire)))?;
        std::fs::write(dir.join(PEDESTRIANS_FILE), jsonl(self.pedestrians.iter().map(PedestrianCount::to_wire)))?;
        std::fs::write(dir.join(DETECTIONS_FILE), jsonl(self.detections.iter().map(DetectionEvent::to_wire)))?;
        std::fs::write(dir.join(RULES_FILE), pretty(&self.rules))?;
        std::fs::write(dir.join(CONFIG_FILE), pretty(&self.config))?;
        std::fs::write(dir.join(TRUTH_FILE), pretty(&self.truth))?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("writing dataset: {0}")]
    Io(#[from] std::io::Error),
}

/// Generate and write a dataset, returning its truth.
pub fn generate_dataset(seed: u64, profile: &Profile, dir: impl AsRef<Path>) -> Result<Truth, GenerateError> {
    let g = generate(seed, profile)?;
    g.write(dir)?;
    Ok(g.truth)
}
