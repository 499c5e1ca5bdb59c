use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{PedestrianCount, PostStreamBatch, RadarReading};
use crate::model::{PostRegistry, SmartPost};

/// Aggregates for one post over one cadence window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    pub post_id: String,
    pub window_start: DateTime<Utc>,
    /// Mean vehicle speed in km/h; `None` when no vehicle passed.
    pub avg_speed: Option<f64>,
    pub vehicle_count: u64,
    pub speeding_count: u64,
    pub pedestrian_count: u64,
    /// Local hour of `window_start`.
    pub hour_of_day: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WindowError {
    #[error("event at {ts} lies outside window [{start}, {end})")]
    OutsideWindow { ts: DateTime<Utc>, start: DateTime<Utc>, end: DateTime<Utc> },
    #[error("event for post {found} passed to window of post {expected}")]
    WrongPost { expected: String, found: String },
}

/// Start of the cadence window containing `ts`.
///
/// The grid is anchored at local midnight. Because the cadence divides 60
/// it is equivalently anchored at every local hour, so flooring the local
/// minute is enough.
pub fn window_index(ts: DateTime<Utc>, cadence_min: u32, tz: Tz) -> DateTime<Utc> {
    debug_assert!(cadence_min > 0 && 60 % cadence_min == 0);
    let local = ts.with_timezone(&tz);
    let back = (local.minute() % cadence_min) as i64 * 60 + local.second() as i64;
    ts - Duration::seconds(back) - Duration::nanoseconds(local.nanosecond() as i64)
}

/// Compute the features of one window from events already known to lie in
/// it. Vehicles are expected to be pre-filtered to light/heavy classes.
pub fn compute_window_features(
    vehicles: &[RadarReading],
    pedestrians: &[PedestrianCount],
    post: &SmartPost,
    window_start: DateTime<Utc>,
    cadence_min: u32,
    tz: Tz,
) -> Result<WindowFeatures, WindowError> {
    let end = window_start + Duration::minutes(cadence_min as i64);
    let check = |post_id: &str, ts: DateTime<Utc>| {
        if post_id != post.post_id {
            return Err(WindowError::WrongPost { expected: post.post_id.clone(), found: post_id.to_string() });
        }
        if ts < window_start || ts >= end {
            return Err(WindowError::OutsideWindow { ts, start: window_start, end });
        }
        Ok(())
    };

    let mut speed_sum = 0.0;
    let mut speeding_count = 0;
    for v in vehicles {
        check(&v.post_id, v.timestamp)?;
        speed_sum += v.speed;
        if v.speed > post.speed_limit as f64 {
            speeding_count += 1;
        }
    }
    let mut pedestrian_count = 0;
    for p in pedestrians {
        check(&p.post_id, p.timestamp)?;
        pedestrian_count += p.count;
    }

    let vehicle_count = vehicles.len() as u64;
    Ok(WindowFeatures {
        post_id: post.post_id.clone(),
        window_start,
        avg_speed: (vehicle_count > 0).then(|| speed_sum / vehicle_count as f64),
        vehicle_count,
        speeding_count,
        pedestrian_count,
        hour_of_day: window_start.with_timezone(&tz).hour(),
    })
}

/// Features for every (post, window) that saw at least one radar or
/// pedestrian reading, ordered by window start then post id.
///
/// Radar streams may contain any class; non-vehicles are dropped here.
pub fn build_window_features(
    radar: &PostStreamBatch<RadarReading>,
    pedestrians: &PostStreamBatch<PedestrianCount>,
    registry: &PostRegistry,
    cadence_min: u32,
    tz: Tz,
) -> Vec<WindowFeatures> {
    type Bucket = (Vec<RadarReading>, Vec<PedestrianCount>);
    let mut buckets: BTreeMap<(DateTime<Utc>, &str), Bucket> = BTreeMap::new();

    for (post_id, stream) in &radar.streams {
        for r in stream.iter().filter(|r| r.object_class.is_vehicle()) {
            let w = window_index(r.timestamp, cadence_min, tz);
            buckets.entry((w, post_id.as_str())).or_default().0.push(r.clone());
        }
    }
    for (post_id, stream) in &pedestrians.streams {
        for p in stream {
            let w = window_index(p.timestamp, cadence_min, tz);
            buckets.entry((w, post_id.as_str())).or_default().1.push(p.clone());
        }
    }

    buckets
        .into_iter()
        .filter_map(|((start, post_id), (vehicles, peds))| {
            let post = registry.get(post_id)?;
            Some(
                compute_window_features(&vehicles, &peds, post, start, cadence_min, tz)
                    .expect("bucketed events lie in their window"),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ObjectClass;
    use crate::model::GeoPoint;

    fn at(s: &str) -> DateTime<Utc> {
        s.parse().unwrap()
    }

    fn post() -> SmartPost {
        SmartPost {
            post_id: "p1".into(),
            street_id: "s1".into(),
            location: GeoPoint { lat: 40.64, lon: -8.65 },
            speed_limit: 50,
            lamp_count: 2,
            lamp_wattage: 80.0,
            dimmable: true,
        }
    }

    #[test]
    fn window_floor_and_boundary() {
        let tz = chrono_tz::UTC;
        assert_eq!(window_index(at("2023-03-01T10:07:30Z"), 15, tz), at("2023-03-01T10:00:00Z"));
        assert_eq!(window_index(at("2023-03-01T10:15:00Z"), 15, tz), at("2023-03-01T10:15:00Z"));
        assert_eq!(window_index(at("2023-03-01T10:59:59Z"), 60, tz), at("2023-03-01T10:00:00Z"));
    }

    #[test]
    fn window_grid_follows_local_quarter_hours() {
        // Kathmandu is UTC+05:45, so local :00 is UTC :15.
        let tz: Tz = "Asia/Kathmandu".parse().unwrap();
        assert_eq!(window_index(at("2023-03-01T10:20:00Z"), 30, tz), at("2023-03-01T10:15:00Z"));
    }

    #[test]
    fn features_example() {
        let start = at("2023-03-01T10:00:00Z");
        let v = |speed: f64, s: i64| RadarReading {
            post_id: "p1".into(),
            timestamp: start + Duration::seconds(s),
            object_class: ObjectClass::LightVehicle,
            speed,
        };
        let p = |count: u64, s: i64| PedestrianCount { post_id: "p1".into(), timestamp: start + Duration::seconds(s), count };
        let f = compute_window_features(&[v(50.0, 1), v(60.0, 20)], &[p(5, 0), p(7, 600)], &post(), start, 15, chrono_tz::UTC)
            .unwrap();
        assert_eq!(f.avg_speed, Some(55.0));
        assert_eq!((f.vehicle_count, f.speeding_count, f.pedestrian_count), (2, 1, 12));
        assert_eq!(f.hour_of_day, 10);

        let empty = compute_window_features(&[], &[], &post(), start, 15, chrono_tz::UTC).unwrap();
        assert_eq!(empty.avg_speed, None);
        assert_eq!((empty.vehicle_count, empty.speeding_count, empty.pedestrian_count), (0, 0, 0));
    }

    #[test]
    fn out_of_window_event_is_a_contract_violation() {
        let start = at("2023-03-01T10:00:00Z");
        let late = PedestrianCount { post_id: "p1".into(), timestamp: at("2023-03-01T10:15:00Z"), count: 1 };
        let err = compute_window_features(&[], &[late], &post(), start, 15, chrono_tz::UTC).unwrap_err();
        assert!(matches!(err, WindowError::OutsideWindow { .. }));
        let other = PedestrianCount { post_id: "p9".into(), timestamp: start, count: 1 };
        let err = compute_window_features(&[], &[other], &post(), start, 15, chrono_tz::UTC).unwrap_err();
        assert!(matches!(err, WindowError::WrongPost { .. }));
    }

    #[test]
    fn hour_of_day_is_local() {
        let tz: Tz = "Europe/Lisbon".parse().unwrap();
        // summer time: UTC+1
        let f = compute_window_features(&[], &[], &post(), at("2023-06-01T10:00:00Z"), 15, tz).unwrap();
        assert_eq!(f.hour_of_day, 11);
    }
}
