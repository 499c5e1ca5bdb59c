//! Author rules in the rule language, evaluate them over windows and
//! compute the hourly speeding ratio of a street.
//!
//! cargo run --example safety_rules

use chrono::{DateTime, Duration, Utc};
use icms::safety::{evaluate_windows, frequency_level, hourly_speeding_ratio, parse_rule, Rule, RuleId, WindowFeatures};
use icms::{Config, GeoPoint, PostRegistry, SmartPost};

fn window(minutes: i64, avg_speed: Option<f64>, speeding: u64, pedestrians: u64) -> WindowFeatures {
    let start: DateTime<Utc> = "2023-03-06T17:00:00Z".parse().unwrap();
    WindowFeatures {
        post_id: "p1".into(),
        window_start: start + Duration::minutes(minutes),
        avg_speed,
        vehicle_count: if avg_speed.is_some() { 4 } else { 0 },
        speeding_count: speeding,
        pedestrian_count: pedestrians,
        hour_of_day: 17 + (minutes / 60) as u32,
    }
}

fn main() -> anyhow::Result<()> {
    let parsed = parse_rule("avg_speed > 50 AND (pedestrian_count >= 2 OR NOT hour_of_day < 20) -> danger")?;
    println!("pretty: {parsed}");

    match parse_rule("speed >> 5 -> danger") {
        Err(e) => println!("error at {}:{}: {}", e.line, e.column, e.message),
        Ok(_) => unreachable!(),
    }

    let rules = [
        Rule::new(RuleId(1), "speeding near people", "speeding_count >= 1 AND pedestrian_count >= 1 -> danger", true)?,
        Rule::new(RuleId(2), "fast", "avg_speed > 45 -> warning", true)?,
    ];
    let windows = vec![
        window(0, Some(52.0), 2, 3),
        window(15, Some(38.0), 0, 5),
        window(30, None, 0, 1),
        window(45, Some(47.0), 1, 0),
        window(60, Some(61.0), 3, 2),
    ];
    let violations = evaluate_windows(&rules, &windows);
    for v in &violations {
        println!("{} rule {} at {}: {}", v.post_id, v.rule_id, v.window_start, v.severity);
    }

    let config = Config::default();
    let now = windows.last().unwrap().window_start;
    let level = frequency_level(&violations, "p1", RuleId(1), now, &config);
    println!("rule 1 fired {} times in the last {} days: {:?}", level.count, config.frequency_horizon_days, level.band);

    let registry = PostRegistry::new([SmartPost {
        post_id: "p1".into(),
        street_id: "avenida".into(),
        location: GeoPoint { lat: 40.64, lon: -8.65 },
        speed_limit: 50,
        lamp_count: 2,
        lamp_wattage: 80.0,
        dimmable: true,
    }])?;
    let day = now.date_naive();
    let ratio = hourly_speeding_ratio("avenida", day, day, &windows, &registry, 1.0, config.timezone)?;
    for h in ratio.hours.iter().filter(|h| h.speeding > 0 || h.pedestrians > 0) {
        println!("{:02}:00 speeding {} pedestrians {} ratio {:.2} exceeded {}", h.hour, h.speeding, h.pedestrians, h.ratio, h.exceeded);
    }
    Ok(())
}
