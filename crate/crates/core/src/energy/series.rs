use std::collections::BTreeMap;

use chrono::{DateTime, Duration, DurationRound, Utc};
use serde::{Deserialize, Serialize};

use crate::ingest::{PedestrianCount, PostStreamBatch, RadarReading};
use crate::model::PostRegistry;

/// One hour of movement on a street. `count` is `None` when the hour had
/// no reading at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub ts: DateTime<Utc>,
    pub count: Option<f64>,
}

/// Hourly movement counts (pedestrians + vehicles + other moving objects)
/// for one street.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementSeries {
    pub street_id: String,
    pub points: Vec<SeriesPoint>,
}

impl MovementSeries {
    pub fn new(street_id: impl Into<String>, points: Vec<SeriesPoint>) -> Self {
        MovementSeries { street_id: street_id.into(), points }
    }

    /// A series on consecutive hours starting at `start`.
    pub fn from_values(street_id: impl Into<String>, start: DateTime<Utc>, values: &[Option<f64>]) -> Self {
        let points = values
            .iter()
            .enumerate()
            .map(|(i, &count)| SeriesPoint { ts: start + Duration::hours(i as i64), count })
            .collect();
        MovementSeries::new(street_id, points)
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.count).collect()
    }

    pub fn present(&self) -> impl Iterator<Item = (DateTime<Utc>, f64)> + '_ {
        self.points.iter().filter_map(|p| p.count.map(|c| (p.ts, c)))
    }

    pub fn present_len(&self) -> usize {
        self.points.iter().filter(|p| p.count.is_some()).count()
    }

    /// Points with `from <= ts < to`.
    pub fn slice(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> MovementSeries {
        MovementSeries::new(
            self.street_id.clone(),
            self.points.iter().copied().filter(|p| p.ts >= from && p.ts < to).collect(),
        )
    }
}

pub fn hour_floor(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.duration_trunc(Duration::hours(1)).expect("hour truncation in range")
}

/// Build the hourly series of a street from raw radar readings (every
/// object class counts as movement) and pedestrian counts.
///
/// An hour is present when at least one post of the street sent any
/// reading in it; hours between the first and last such hour with no
/// reading are missing.
pub fn build_movement_series(
    street_id: &str,
    radar: &PostStreamBatch<RadarReading>,
    pedestrians: &PostStreamBatch<PedestrianCount>,
    registry: &PostRegistry,
) -> MovementSeries {
    let mut hours: BTreeMap<DateTime<Utc>, u64> = BTreeMap::new();
    for post in registry.posts_on_street(street_id) {
        for r in radar.get(&post.post_id) {
            *hours.entry(hour_floor(r.timestamp)).or_default() += 1;
        }
        for p in pedestrians.get(&post.post_id) {
            *hours.entry(hour_floor(p.timestamp)).or_default() += p.count;
        }
    }
    let (Some(&first), Some(&last)) = (hours.keys().next(), hours.keys().next_back()) else {
        return MovementSeries::new(street_id, Vec::new());
    };
    let n = (last - first).num_hours() as usize + 1;
    let points = (0..n)
        .map(|i| {
            let ts = first + Duration::hours(i as i64);
            SeriesPoint { ts, count: hours.get(&ts).map(|&c| c as f64) }
        })
        .collect();
    MovementSeries::new(street_id, points)
}
