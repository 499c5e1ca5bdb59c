use chrono::NaiveDate;
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::window::WindowFeatures;
use crate::model::PostRegistry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRatio {
    pub hour: u32,
    pub speeding: u64,
    pub pedestrians: u64,
    /// `speeding / max(pedestrians, 1)`
    pub ratio: f64,
    pub exceeded: bool,
}

/// Speeding-vehicle to pedestrian ratio per local hour of day for a street.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyRatio {
    pub street_id: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub threshold: f64,
    pub hours: Vec<HourRatio>,
}

impl HourlyRatio {
    pub fn exceeded_hours(&self) -> impl Iterator<Item = u32> + '_ {
        self.hours.iter().filter(|h| h.exceeded).map(|h| h.hour)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RatioError {
    #[error("unknown street {0:?}")]
    UnknownStreet(String),
    #[error("empty date range {from}..={to}")]
    EmptyRange { from: NaiveDate, to: NaiveDate },
}

/// Aggregate all windows of the street's posts whose local date lies in
/// `from..=to`.
pub fn hourly_speeding_ratio(
    street_id: &str,
    from: NaiveDate,
    to: NaiveDate,
    features: &[WindowFeatures],
    registry: &PostRegistry,
    threshold: f64,
    tz: Tz,
) -> Result<HourlyRatio, RatioError> {
    if !registry.has_street(street_id) {
        return Err(RatioError::UnknownStreet(street_id.to_string()));
    }
    if from > to {
        return Err(RatioError::EmptyRange { from, to });
    }
    let mut speeding = [0u64; 24];
    let mut pedestrians = [0u64; 24];
    for f in features {
        if registry.street_of(&f.post_id) != Some(street_id) {
            continue;
        }
        let date = f.window_start.with_timezone(&tz).date_naive();
        if date < from || date > to {
            continue;
        }
        let h = f.hour_of_day as usize;
        speeding[h] += f.speeding_count;
        pedestrians[h] += f.pedestrian_count;
    }
    let hours = (0..24)
        .map(|h| {
            let ratio = speeding[h] as f64 / pedestrians[h].max(1) as f64;
            HourRatio {
                hour: h as u32,
                speeding: speeding[h],
                pedestrians: pedestrians[h],
                ratio,
                exceeded: ratio > threshold,
            }
        })
        .collect();
    Ok(HourlyRatio { street_id: street_id.to_string(), from, to, threshold, hours })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GeoPoint, SmartPost};
    use chrono::{DateTime, Utc};

    fn registry() -> PostRegistry {
        let post = |id: &str, street: &str| SmartPost {
            post_id: id.into(),
            street_id: street.into(),
            location: GeoPoint { lat: 40.0, lon: -8.0 },
            speed_limit: 50,
            lamp_count: 1,
            lamp_wattage: 80.0,
            dimmable: true,
        };
        PostRegistry::new([post("p1", "s1"), post("p2", "s1"), post("p3", "s2")]).unwrap()
    }

    fn window(post: &str, ts: &str, speeding: u64, peds: u64) -> WindowFeatures {
        WindowFeatures {
            post_id: post.into(),
            window_start: ts.parse::<DateTime<Utc>>().unwrap(),
            avg_speed: Some(60.0),
            vehicle_count: speeding,
            speeding_count: speeding,
            pedestrian_count: peds,
            hour_of_day: ts[11..13].parse().unwrap(),
        }
    }

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn ratio_examples() {
        let ws = [
            window("p1", "2023-03-01T14:00:00Z", 2, 4),
            window("p2", "2023-03-01T14:15:00Z", 3, 6),
            window("p3", "2023-03-01T14:15:00Z", 100, 0),
            window("p1", "2023-03-01T09:00:00Z", 3, 0),
        ];
        let r = hourly_speeding_ratio("s1", d("2023-03-01"), d("2023-03-01"), &ws, &registry(), 1.0, chrono_tz::UTC)
            .unwrap();
        assert_eq!(r.hours.len(), 24);
        assert_eq!(r.hours[14].ratio, 0.5);
        assert!(!r.hours[14].exceeded);
        assert_eq!(r.hours[9].ratio, 3.0);
        assert!(r.hours[9].exceeded);
        assert_eq!(r.hours[0].ratio, 0.0);
        assert_eq!(r.exceeded_hours().collect::<Vec<_>>(), [9]);
    }

    #[test]
    fn range_and_street_errors() {
        let reg = registry();
        assert_eq!(
            hourly_speeding_ratio("nope", d("2023-03-01"), d("2023-03-02"), &[], &reg, 1.0, chrono_tz::UTC),
            Err(RatioError::UnknownStreet("nope".into()))
        );
        assert!(matches!(
            hourly_speeding_ratio("s1", d("2023-03-02"), d("2023-03-01"), &[], &reg, 1.0, chrono_tz::UTC),
            Err(RatioError::EmptyRange { .. })
        ));
        let outside = [window("p1", "2023-03-05T14:00:00Z", 5, 0)];
        let r = hourly_speeding_ratio("s1", d("2023-03-01"), d("2023-03-02"), &outside, &reg, 1.0, chrono_tz::UTC).unwrap();
        assert_eq!(r.hours[14].speeding, 0);
    }
}
