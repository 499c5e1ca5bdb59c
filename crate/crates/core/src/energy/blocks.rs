use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::series::SeriesPoint;
use crate::model::NightWindow;

/// Predicted counts below this are treated as no activity.
pub const FORECAST_ZERO_BELOW: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockBasis {
    Observed,
    Forecast,
}

impl std::str::FromStr for BlockBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "observed" => Ok(BlockBasis::Observed),
            "forecast" => Ok(BlockBasis::Forecast),
            other => Err(format!("unknown basis {other:?}; expected observed or forecast")),
        }
    }
}

impl BlockBasis {
    pub fn is_idle(self, count: f64) -> bool {
        match self {
            BlockBasis::Observed => count == 0.0,
            BlockBasis::Forecast => count < FORECAST_ZERO_BELOW,
        }
    }
}

/// A maximal run of idle night hours on a street.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityBlock {
    pub street_id: String,
    pub start: DateTime<Utc>,
    pub hours: u32,
    pub basis: BlockBasis,
}

impl ActivityBlock {
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.hours as i64)
    }
}

/// Maximal runs of consecutive hours that are inside the night window and
/// idle under `basis`, keeping those at least `min_block_hours` long.
/// Missing hours never qualify. Points must be sorted by time.
pub fn find_zero_blocks(
    street_id: &str,
    points: &[SeriesPoint],
    basis: BlockBasis,
    night: NightWindow,
    min_block_hours: u32,
    tz: Tz,
) -> Vec<ActivityBlock> {
    let qualifies = |p: &SeriesPoint| {
        night.contains(p.ts.with_timezone(&tz).hour()) && p.count.is_some_and(|c| basis.is_idle(c))
    };
    let mut blocks = Vec::new();
    let mut run: Option<(DateTime<Utc>, u32)> = None;
    let mut prev: Option<DateTime<Utc>> = None;

    let mut close = |run: &mut Option<(DateTime<Utc>, u32)>| {
        if let Some((start, hours)) = run.take() {
            if hours >= min_block_hours {
                blocks.push(ActivityBlock { street_id: street_id.to_string(), start, hours, basis });
            }
        }
    };

    for p in points {
        let contiguous = prev.is_some_and(|t| p.ts - t == Duration::hours(1));
        if !contiguous {
            close(&mut run);
        }
        if qualifies(p) {
            match run.as_mut() {
                Some((_, hours)) => *hours += 1,
                None => run = Some((p.ts, 1)),
            }
        } else {
            close(&mut run);
        }
        prev = Some(p.ts);
    }
    close(&mut run);
    blocks
}

/// The local date whose night contains `ts`: hours after midnight of a
/// wrapping window belong to the previous evening's night.
pub fn night_of(ts: DateTime<Utc>, night: NightWindow, tz: Tz) -> NaiveDate {
    let local = ts.with_timezone(&tz);
    let date = local.date_naive();
    if night.wraps() && local.hour() < night.end {
        date.pred_opt().expect("date in range")
    } else {
        date
    }
}
