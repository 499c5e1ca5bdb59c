use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};

use super::series::{hour_floor, MovementSeries, SeriesPoint};
use super::EnergyError;
use crate::model::Config;

// Outlier replacement and gap filling repeat until neither changes
// anything; in practice this settles in two or three rounds.
const MAX_ROUNDS: usize = 100;

/// Value at 1-based rank `ceil(p * n)` of the sorted sample.
pub fn nearest_rank_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Clean a street's hourly series.
///
/// 1. Timestamps are floored to the hour; duplicates collapse to the mean
///    of their present values and absent hours between the first and last
///    point become missing.
/// 2. Values outside `[Q1 - k·IQR, Q3 + k·IQR]` are replaced by linear
///    interpolation between the nearest present non-outlier neighbours.
/// 3. Missing runs of at most `max_gap_hours` are linearly interpolated;
///    longer runs and runs touching either end stay missing.
///
/// Steps 2 and 3 are repeated until the series is stable, which makes the
/// whole operation idempotent.
pub fn preprocess_series(raw: &MovementSeries, config: &Config) -> Result<MovementSeries, EnergyError> {
    let mut by_hour: BTreeMap<DateTime<Utc>, (f64, u32)> = BTreeMap::new();
    let mut hours = Vec::new();
    for p in &raw.points {
        let ts = hour_floor(p.ts);
        hours.push(ts);
        if let Some(c) = p.count {
            let e = by_hour.entry(ts).or_insert((0.0, 0));
            e.0 += c;
            e.1 += 1;
        }
    }
    if by_hour.len() < 4 {
        return Err(EnergyError::InsufficientData {
            street_id: raw.street_id.clone(),
            needed: 4,
            found: by_hour.len(),
        });
    }
    let first = *hours.iter().min().expect("nonempty");
    let last = *hours.iter().max().expect("nonempty");
    let n = (last - first).num_hours() as usize + 1;
    let mut values: Vec<Option<f64>> = (0..n)
        .map(|i| by_hour.get(&(first + Duration::hours(i as i64))).map(|(s, c)| s / *c as f64))
        .collect();

    for _ in 0..MAX_ROUNDS {
        let replaced = replace_outliers(&mut values, config.outlier_k);
        let filled = fill_gaps(&mut values, config.max_gap_hours as usize);
        if replaced == 0 && filled == 0 {
            break;
        }
    }

    Ok(MovementSeries::new(
        raw.street_id.clone(),
        values
            .into_iter()
            .enumerate()
            .map(|(i, count)| SeriesPoint { ts: first + Duration::hours(i as i64), count })
            .collect(),
    ))
}

fn interpolate(values: &[Option<f64>], left: Option<usize>, right: Option<usize>, at: usize) -> Option<f64> {
    match (left, right) {
        (Some(l), Some(r)) => {
            let (a, b) = (values[l]?, values[r]?);
            let t = (at - l) as f64 / (r - l) as f64;
            Some(a + (b - a) * t)
        }
        (Some(i), None) | (None, Some(i)) => values[i],
        (None, None) => None,
    }
}

fn replace_outliers(values: &mut [Option<f64>], k: f64) -> usize {
    let mut sorted: Vec<f64> = values.iter().flatten().copied().collect();
    if sorted.len() < 4 {
        return 0;
    }
    sorted.sort_by(f64::total_cmp);
    let q1 = nearest_rank_quantile(&sorted, 0.25);
    let q3 = nearest_rank_quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - k * iqr, q3 + k * iqr);

    let is_outlier: Vec<bool> = values.iter().map(|v| v.is_some_and(|x| x < lo || x > hi)).collect();
    let outliers: Vec<usize> = (0..values.len()).filter(|&i| is_outlier[i]).collect();
    if outliers.is_empty() {
        return 0;
    }
    let snapshot = values.to_vec();
    let good = |i: usize| snapshot[i].is_some() && !is_outlier[i];
    for &i in &outliers {
        let left = (0..i).rev().find(|&j| good(j));
        let right = (i + 1..values.len()).find(|&j| good(j));
        values[i] = interpolate(&snapshot, left, right, i);
    }
    outliers.len()
}

fn fill_gaps(values: &mut [Option<f64>], max_gap: usize) -> usize {
    let mut filled = 0;
    let mut i = 0;
    while i < values.len() {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < values.len() && values[i].is_none() {
            i += 1;
        }
        let len = i - start;
        if start == 0 || i == values.len() || len > max_gap {
            continue;
        }
        let (l, r) = (start - 1, i);
        for j in start..i {
            values[j] = interpolate(values, Some(l), Some(r), j);
        }
        filled += len;
    }
    filled
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[Option<f64>]) -> MovementSeries {
        MovementSeries::from_values("s", "2023-03-01T00:00:00Z".parse().unwrap(), values)
    }

    fn run(values: &[Option<f64>]) -> Vec<Option<f64>> {
        preprocess_series(&series(values), &Config::default()).unwrap().values()
    }

    #[test]
    fn nearest_rank_quartiles() {
        let s = [10.0, 11.0, 12.0, 500.0];
        assert_eq!(nearest_rank_quantile(&s, 0.25), 10.0);
        assert_eq!(nearest_rank_quantile(&s, 0.75), 12.0);
        assert_eq!(nearest_rank_quantile(&[7.0], 0.25), 7.0);
    }

    #[test]
    fn outlier_is_interpolated() {
        assert_eq!(run(&[Some(10.0), Some(11.0), Some(500.0), Some(12.0)]), [Some(10.0), Some(11.0), Some(11.5), Some(12.0)]);
    }

    #[test]
    fn short_gap_is_interpolated() {
        assert_eq!(
            run(&[Some(10.0), None, Some(12.0), Some(12.0), Some(11.0)]),
            [Some(10.0), Some(11.0), Some(12.0), Some(12.0), Some(11.0)]
        );
    }

    #[test]
    fn long_gap_is_kept() {
        let mut v = vec![Some(10.0), Some(11.0)];
        v.extend([None; 5]);
        v.extend([Some(12.0), Some(13.0)]);
        let out = run(&v);
        assert_eq!(out, v);
        let mut three = vec![Some(10.0), Some(11.0)];
        three.extend([None; 3]);
        three.extend([Some(15.0), Some(13.0)]);
        assert_eq!(&run(&three)[2..5], [Some(12.0), Some(13.0), Some(14.0)]);
    }

    #[test]
    fn edge_gaps_stay_missing() {
        assert_eq!(
            run(&[None, Some(1.0), Some(2.0), Some(3.0), Some(4.0), None]),
            [None, Some(1.0), Some(2.0), Some(3.0), Some(4.0), None]
        );
    }

    #[test]
    fn duplicates_collapse_to_mean() {
        let t0: DateTime<Utc> = "2023-03-01T00:00:00Z".parse().unwrap();
        let p = |h: i64, m: i64, c: f64| SeriesPoint { ts: t0 + Duration::hours(h) + Duration::minutes(m), count: Some(c) };
        let raw = MovementSeries::new("s", vec![p(2, 0, 4.0), p(0, 0, 1.0), p(1, 0, 2.0), p(1, 30, 4.0), p(3, 0, 5.0)]);
        let out = preprocess_series(&raw, &Config::default()).unwrap();
        assert_eq!(out.values(), [Some(1.0), Some(3.0), Some(4.0), Some(5.0)]);
        assert!(out.points.windows(2).all(|w| w[1].ts - w[0].ts == Duration::hours(1)));
    }

    #[test]
    fn too_few_points() {
        let err = preprocess_series(&series(&[Some(1.0), None, Some(2.0), Some(3.0)]), &Config::default()).unwrap_err();
        assert!(matches!(err, EnergyError::InsufficientData { found: 3, .. }));
    }

    #[test]
    fn idempotent_on_example() {
        let once = preprocess_series(&series(&[Some(10.0), Some(11.0), None, Some(500.0), Some(12.0), Some(0.0)]), &Config::default()).unwrap();
        let twice = preprocess_series(&once, &Config::default()).unwrap();
        assert_eq!(once, twice);
    }
}
