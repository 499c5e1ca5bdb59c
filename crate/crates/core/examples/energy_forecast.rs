//! Clean an hourly movement series, fit the day-type × hour forecaster,
//! score it on a holdout month and turn quiet nights into dimming plans.
//!
//! cargo run --example energy_forecast

use chrono::{DateTime, Duration, Timelike, Utc};
use icms::energy::{
    evaluate, find_zero_blocks, fit_model, forecast_24h, preprocess_series, recommend, BlockBasis, MovementSeries,
};
use icms::{Config, DayType, GeoPoint, SmartPost};

fn expected(day: DayType, hour: u32) -> f64 {
    match (day, hour) {
        (_, 1..=4) => 0.0,
        (DayType::Workday, 7..=19) => 30.0,
        (DayType::Weekend, 9..=21) => 18.0,
        _ => 5.0,
    }
}

fn main() -> anyhow::Result<()> {
    let config = Config::default();
    let start: DateTime<Utc> = "2023-03-01T00:00:00Z".parse()?;
    let hours = 24 * 61;
    let mut values: Vec<Option<f64>> = (0..hours)
        .map(|h| {
            let ts = start + Duration::hours(h);
            let local = ts.with_timezone(&config.timezone);
            Some(expected(config.day_type_at(ts), local.hour()))
        })
        .collect();
    // a sensor glitch and a short outage
    values[100] = Some(900.0);
    values[200] = None;
    values[201] = None;

    let raw = MovementSeries::from_values("rua-direita", start, &values);
    let clean = preprocess_series(&raw, &config)?;
    println!("glitch {:?} -> {:?}", raw.points[100].count, clean.points[100].count);
    println!("outage {:?} -> {:?}", raw.points[200].count, clean.points[200].count);

    let boundary: DateTime<Utc> = "2023-03-31T23:00:00Z".parse()?;
    let model = fit_model(&clean.slice(start, boundary), &config)?;
    let holdout = raw.slice(boundary, start + Duration::hours(hours));
    let score = evaluate(&model, &holdout, &config)?;
    println!("holdout mae {:.3} over {} hours", score.mae, score.n);

    let forecast = forecast_24h(&model, "2023-04-06T20:30:00Z".parse()?, &config);
    for p in forecast.points.iter().take(6) {
        println!("{} -> {:.1}", p.ts, p.predicted);
    }

    let night = raw.slice("2023-04-05T18:00:00Z".parse()?, "2023-04-06T08:00:00Z".parse()?);
    let blocks = find_zero_blocks(
        "rua-direita",
        &night.points,
        BlockBasis::Observed,
        config.night_window,
        config.min_block_hours,
        config.timezone,
    );
    let posts: Vec<SmartPost> = (0..10)
        .map(|i| SmartPost {
            post_id: format!("p{i}"),
            street_id: "rua-direita".into(),
            location: GeoPoint { lat: 40.64, lon: -8.65 },
            speed_limit: 50,
            lamp_count: 1,
            lamp_wattage: 80.0,
            dimmable: true,
        })
        .collect();
    let refs: Vec<&SmartPost> = posts.iter().collect();
    for level in [0.3, 0.5] {
        for r in recommend(&blocks, &refs, level) {
            println!(
                "{} for {} h from {}: {:?} saves {:.2} kWh",
                r.street_id, r.block.hours, r.block.start, r.action, r.estimated_savings_kwh
            );
        }
    }
    Ok(())
}
