//! Reference implementations the engines are checked against. Each one is
//! written the slow, obvious way and shares no code with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use chrono_tz::Tz;
use icms::energy::{ActivityBlock, BlockBasis, SeriesPoint};
use icms::ingest::{ObjectClass, PedestrianCount, RadarReading};
use icms::maintenance::{IssueRegistry, IssueStatus};
use icms::safety::WindowFeatures;
use icms::{haversine_m, Config, GeoPoint, PostRegistry, SmartPost};
use rand::Rng;

pub const FEATURES: [&str; 5] = ["avg_speed", "vehicle_count", "speeding_count", "pedestrian_count", "hour_of_day"];
pub const OPS: [&str; 6] = [">", ">=", "<", "<=", "==", "!="];

/// Rule condition as the oracle sees it.
#[derive(Debug, Clone)]
pub enum Cond {
    Cmp(usize, usize, f64),
    Not(Box<Cond>),
    And(Vec<Cond>),
    Or(Vec<Cond>),
}

impl Cond {
    /// Fully parenthesized text.
    pub fn render(&self) -> String {
        match self {
            Cond::Cmp(f, op, v) => format!("{} {} {}", FEATURES[*f], OPS[*op], v),
            Cond::Not(c) => format!("NOT ({})", c.render()),
            Cond::And(cs) => cs.iter().map(|c| format!("({})", c.render())).collect::<Vec<_>>().join(" AND "),
            Cond::Or(cs) => cs.iter().map(|c| format!("({})", c.render())).collect::<Vec<_>>().join(" OR "),
        }
    }

    /// Same condition with only the parentheses precedence needs.
    pub fn render_tight(&self) -> String {
        fn operand(c: &Cond, in_and: bool) -> String {
            match c {
                Cond::Or(_) => format!("({})", c.render_tight()),
                Cond::And(_) if in_and => format!("({})", c.render_tight()),
                _ => c.render_tight(),
            }
        }
        match self {
            Cond::Cmp(..) => self.render(),
            Cond::Not(c) => match **c {
                Cond::Cmp(..) | Cond::Not(_) => format!("NOT {}", c.render_tight()),
                _ => format!("NOT ({})", c.render_tight()),
            },
            Cond::And(cs) => cs.iter().map(|c| operand(c, true)).collect::<Vec<_>>().join(" AND "),
            Cond::Or(cs) => cs.iter().map(|c| operand(c, false)).collect::<Vec<_>>().join(" OR "),
        }
    }

    pub fn eval(&self, v: &[Option<f64>; 5]) -> bool {
        match self {
            Cond::Cmp(f, op, rhs) => match v[*f] {
                None => false,
                Some(x) => match *op {
                    0 => x > *rhs,
                    1 => x >= *rhs,
                    2 => x < *rhs,
                    3 => x <= *rhs,
                    4 => x == *rhs,
                    _ => x != *rhs,
                },
            },
            Cond::Not(c) => !c.eval(v),
            Cond::And(cs) => {
                let mut all = true;
                for c in cs {
                    all = all && c.eval(v);
                }
                all
            }
            Cond::Or(cs) => {
                let mut any = false;
                for c in cs {
                    any = any || c.eval(v);
                }
                any
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Cond::Cmp(..) => 1,
            Cond::Not(c) => 1 + c.depth(),
            Cond::And(cs) | Cond::Or(cs) => 1 + cs.iter().map(Cond::depth).max().unwrap(),
        }
    }
}

/// Constants drawn from the values features actually take so that
/// comparisons go both ways, with some decimals mixed in.
pub fn random_constant(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(0..24) as f64,
        1 => rng.random_range(0..120) as f64,
        2 => (rng.random_range(-500..1500) as f64) / 10.0,
        _ => (rng.random_range(0..100_000) as f64) / 1000.0,
    }
}

pub fn random_cond(rng: &mut impl Rng, depth: usize) -> Cond {
    if depth <= 1 || rng.random_bool(0.3) {
        return Cond::Cmp(rng.random_range(0..5), rng.random_range(0..6), random_constant(rng));
    }
    match rng.random_range(0..3) {
        0 => Cond::Not(Box::new(random_cond(rng, depth - 1))),
        k => {
            let n = rng.random_range(2..=4);
            let cs = (0..n).map(|_| random_cond(rng, depth - 1)).collect();
            if k == 1 {
                Cond::And(cs)
            } else {
                Cond::Or(cs)
            }
        }
    }
}

pub fn random_features(rng: &mut impl Rng) -> WindowFeatures {
    let vehicles = rng.random_range(0..8u64);
    let speeding = if vehicles == 0 { 0 } else { rng.random_range(0..=vehicles) };
    let avg = if vehicles == 0 {
        None
    } else if rng.random_bool(0.2) {
        Some(rng.random_range(0..120) as f64)
    } else {
        Some(rng.random_range(0..120_000) as f64 / 1000.0)
    };
    WindowFeatures {
        post_id: "p".into(),
        window_start: "2023-03-01T00:00:00Z".parse().unwrap(),
        avg_speed: avg,
        vehicle_count: vehicles,
        speeding_count: speeding,
        pedestrian_count: rng.random_range(0..20),
        hour_of_day: rng.random_range(0..24),
    }
}

pub fn feature_values(w: &WindowFeatures) -> [Option<f64>; 5] {
    [
        w.avg_speed,
        Some(w.vehicle_count as f64),
        Some(w.speeding_count as f64),
        Some(w.pedestrian_count as f64),
        Some(w.hour_of_day as f64),
    ]
}

pub fn post(id: &str, street: &str, limit: u32) -> SmartPost {
    SmartPost {
        post_id: id.into(),
        street_id: street.into(),
        location: GeoPoint { lat: 40.64, lon: -8.65 },
        speed_limit: limit,
        lamp_count: 2,
        lamp_wattage: 80.0,
        dimmable: true,
    }
}

/// Random radar/pedestrian events over a few posts, some of them
/// unregistered, spread across a DST change.
pub fn random_events(rng: &mut impl Rng, n: usize) -> (Vec<RadarReading>, Vec<PedestrianCount>) {
    let posts = ["p0", "p1", "p2", "p3", "ghost"];
    let t0: DateTime<Utc> = "2023-03-25T00:00:00Z".parse().unwrap();
    let classes = [ObjectClass::LightVehicle, ObjectClass::HeavyVehicle, ObjectClass::Other];
    let mut radar = Vec::new();
    let mut peds = Vec::new();
    for _ in 0..n {
        let post_id = posts[rng.random_range(0..posts.len())].to_string();
        let timestamp = t0 + Duration::seconds(rng.random_range(0..4 * 86_400));
        if rng.random_bool(0.6) {
            radar.push(RadarReading {
                post_id,
                timestamp,
                object_class: classes[rng.random_range(0..3)],
                speed: rng.random_range(0..900) as f64 / 10.0,
            });
        } else {
            peds.push(PedestrianCount { post_id, timestamp, count: rng.random_range(0..9) });
        }
    }
    (radar, peds)
}

pub fn event_registry() -> PostRegistry {
    PostRegistry::new([post("p0", "a", 50), post("p1", "a", 30), post("p2", "b", 40), post("p3", "b", 50)]).unwrap()
}

/// The window containing `ts`, found by walking back minute by minute to
/// a local wall-clock minute divisible by the cadence.
pub fn oracle_window(ts: DateTime<Utc>, cadence: u32, tz: Tz) -> DateTime<Utc> {
    let mut w = ts.with_nanosecond(0).unwrap().with_second(0).unwrap();
    while !w.with_timezone(&tz).minute().is_multiple_of(cadence) {
        w -= Duration::minutes(1);
    }
    w
}

/// (speed sum, vehicles, speeding, pedestrians) per (post, window).
pub type WindowTotals = BTreeMap<(String, DateTime<Utc>), (f64, u64, u64, u64)>;

/// Per-window aggregates computed independently.
pub fn oracle_windows(
    radar: &[RadarReading],
    peds: &[PedestrianCount],
    registry: &PostRegistry,
    cadence: u32,
    tz: Tz,
) -> WindowTotals {
    let mut out = WindowTotals::new();
    for r in radar {
        let Some(p) = registry.get(&r.post_id) else { continue };
        if !matches!(r.object_class, ObjectClass::LightVehicle | ObjectClass::HeavyVehicle) {
            continue;
        }
        let e = out.entry((r.post_id.clone(), oracle_window(r.timestamp, cadence, tz))).or_default();
        e.0 += r.speed;
        e.1 += 1;
        if r.speed > p.speed_limit as f64 {
            e.2 += 1;
        }
    }
    for c in peds {
        if !registry.contains(&c.post_id) {
            continue;
        }
        out.entry((c.post_id.clone(), oracle_window(c.timestamp, cadence, tz))).or_default().3 += c.count;
    }
    out
}

/// All maximal qualifying runs, by checking every (start, end) pair.
#[allow(clippy::needless_range_loop)]
pub fn oracle_blocks(
    street: &str,
    points: &[SeriesPoint],
    basis: BlockBasis,
    night: (u32, u32),
    min_hours: u32,
    tz: Tz,
) -> Vec<ActivityBlock> {
    let in_night = |h: u32| if night.0 <= night.1 { h >= night.0 && h < night.1 } else { h >= night.0 || h < night.1 };
    let ok = |i: usize| {
        let p = &points[i];
        let idle = match (basis, p.count) {
            (_, None) => false,
            (BlockBasis::Observed, Some(c)) => c == 0.0,
            (BlockBasis::Forecast, Some(c)) => c < 0.5,
        };
        idle && in_night(p.ts.with_timezone(&tz).hour())
    };
    let linked = |i: usize| points[i + 1].ts - points[i].ts == Duration::hours(1);
    let n = points.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..=n {
            let run_ok = (i..j).all(ok) && (i..j - 1).all(linked);
            let left_max = i == 0 || !ok(i - 1) || !linked(i - 1);
            let right_max = j == n || !ok(j) || !linked(j - 1);
            if run_ok && left_max && right_max && (j - i) as u32 >= min_hours {
                out.push(ActivityBlock { street_id: street.to_string(), start: points[i].ts, hours: (j - i) as u32, basis });
            }
        }
    }
    out
}

/// The two registry invariants; returns a description of the first breach.
pub fn registry_breach(reg: &IssueRegistry, accepted: u64, config: &Config) -> Option<String> {
    let live: Vec<_> = reg.iter().filter(|i| i.status != IssueStatus::Resolved).collect();
    for (k, a) in live.iter().enumerate() {
        for b in &live[k + 1..] {
            if a.class == b.class && haversine_m(a.location, b.location) <= config.dedup_radius_m {
                return Some(format!("issues {} and {} overlap", a.issue_id, b.issue_id));
            }
        }
    }
    let total: u64 = reg.iter().map(|i| i.detection_count).sum();
    if total != accepted {
        return Some(format!("detection counts sum to {total}, accepted {accepted}"));
    }
    None
}

/// kWh saved on a street over `hours`: dimmed to `level` when every post
/// can dim, otherwise half the lamps switched off.
pub fn oracle_savings(hours: u32, posts: &[SmartPost], level: f64) -> f64 {
    let watts: f64 = posts.iter().map(|p| p.lamp_count as f64 * p.lamp_wattage).sum();
    let kept = if posts.iter().all(|p| p.dimmable) { level } else { 0.5 };
    hours as f64 * watts * (1.0 - kept) / 1000.0
}

pub fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Hourly movement following the generator's day-type × hour pattern from
/// `from` for `hours` hours, plus Gaussian noise of `sigma`.
pub fn pattern_series(
    from: DateTime<Utc>,
    hours: i64,
    config: &Config,
    sigma: f64,
    rng: &mut impl Rng,
) -> icms::energy::MovementSeries {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let values: Vec<Option<f64>> = (0..hours)
        .map(|h| {
            let ts = from + Duration::hours(h);
            let expected = icms::replay::generate::pattern(2, config.day_type_at(ts), config.local_hour(ts), true);
            Some(if sigma > 0.0 { expected + normal.sample(rng) } else { expected })
        })
        .collect();
    icms::energy::MovementSeries::from_values("s", from, &values)
}

/// One step of a registry workload.
#[derive(Debug, Clone)]
pub enum RegistryOp {
    Detect(icms::maintenance::DetectionEvent),
    Acknowledge(u64),
    Resolve(u64),
}

/// Detections scattered around a handful of hotspots a few radii apart,
/// interleaved with lifecycle actions on possibly unknown ids.
pub fn random_registry_ops(rng: &mut impl Rng, n: usize) -> Vec<RegistryOp> {
    use icms::maintenance::{DetectionClass, DetectionEvent};
    let t0: DateTime<Utc> = "2023-03-01T00:00:00Z".parse().unwrap();
    (0..n)
        .map(|i| match rng.random_range(0..10) {
            0 => RegistryOp::Acknowledge(rng.random_range(1..12)),
            1 => RegistryOp::Resolve(rng.random_range(1..12)),
            _ => {
                let spot = rng.random_range(0..4) as f64;
                // about 111 m per 0.001° of latitude
                let lat = 40.64 + spot * 0.0004 + rng.random_range(-300..300) as f64 * 1e-6;
                let lon = -8.65 + rng.random_range(-300..300) as f64 * 1e-6;
                RegistryOp::Detect(DetectionEvent {
                    source_id: "bus".into(),
                    timestamp: t0 + Duration::minutes(i as i64 * 7),
                    class: DetectionClass::ALL[rng.random_range(0..3)],
                    confidence: rng.random_range(0..=100) as f64 / 100.0,
                    location: GeoPoint { lat, lon },
                    image_ref: None,
                })
            }
        })
        .collect()
}

/// Run a workload, checking the invariants after every step.
pub fn run_registry_ops(ops: &[RegistryOp], config: &Config) -> Result<IssueRegistry, String> {
    use icms::maintenance::{IssueAction, IssueId};
    let mut reg = IssueRegistry::new();
    let mut accepted = 0;
    for (k, op) in ops.iter().enumerate() {
        match op {
            RegistryOp::Detect(d) => {
                reg.ingest_detection(d, config).map_err(|e| e.to_string())?;
                accepted += 1;
            }
            RegistryOp::Acknowledge(id) => {
                let _ = reg.transition(IssueId(*id), IssueAction::Acknowledge);
            }
            RegistryOp::Resolve(id) => {
                let _ = reg.transition(IssueId(*id), IssueAction::Resolve);
            }
        }
        if let Some(breach) = registry_breach(&reg, accepted, config) {
            return Err(format!("after step {k}: {breach}"));
        }
    }
    Ok(reg)
}

/// Interleave a generated dataset's feeds with rule edits, lifecycle
/// actions and a training run, in batches of random size. Returns the
/// batches. Ingest batches always apply; rule and issue actions may be
/// rejected.
pub fn mixed_batches(rng: &mut impl Rng, data: &icms::replay::Generated, n: usize) -> Vec<Vec<icms::service::Command>> {
    use icms::ingest::Event;
    use icms::maintenance::IssueId;
    use icms::safety::RuleId;
    use icms::service::Command;

    let mut sensors: Vec<Event> = data
        .radar
        .iter()
        .cloned()
        .map(Event::Radar)
        .chain(data.pedestrians.iter().cloned().map(Event::Pedestrian))
        .collect();
    sensors.sort_by_key(|e| e.timestamp());
    // detections first so lifecycle actions have issues to act on
    let mut feed: Vec<Event> = data.detections.iter().cloned().map(Event::Detection).chain(sensors).collect();
    feed.truncate(n);

    let mut batches = Vec::new();
    let mut events = feed.into_iter().peekable();
    let mut rule = 0;
    while events.peek().is_some() {
        let size = rng.random_range(1..200);
        let batch: Vec<Command> = events
            .by_ref()
            .take(size)
            .map(|event| Command::Ingest { raw: event.to_wire(), event })
            .collect();
        batches.push(batch);
        let mut batch = Vec::new();
        match rng.random_range(0..8) {
            0 => {
                rule += 1;
                batch.push(Command::RulePut {
                    rule_id: RuleId(rule),
                    name: format!("r{rule}"),
                    text: format!("vehicle_count > {} OR avg_speed > 4{} -> warning", rule % 5, rule % 10),
                    enabled: rule % 3 != 0,
                });
            }
            1 => batch.push(Command::RuleDelete { rule_id: RuleId(rng.random_range(1..=rule.max(1))) }),
            2 => batch.push(Command::IssueAcknowledge { issue_id: IssueId(rng.random_range(1..5)) }),
            3 => batch.push(Command::IssueResolve { issue_id: IssueId(rng.random_range(1..5)) }),
            4 if rng.random_bool(0.2) => batch.push(Command::Train { from: None, to: None }),
            _ => {}
        }
        if !batch.is_empty() {
            batches.push(batch);
        }
    }
    batches
}
