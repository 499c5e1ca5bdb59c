//! Drive the HTTP API in-process: ingest, author a rule, read violations,
//! train and forecast, then restart from the event log.
//!
//! cargo run --example api_server
//!
//! For a real listener use `icms serve --data-dir DIR --posts posts.json`.

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request};
use http_body_util::BodyExt;
use icms::replay::generate;
use icms::replay::Profile;
use icms::service::{router, Engines, Service};
use icms::PostRegistry;
use tower::ServiceExt;

async fn call(app: &axum::Router, method: Method, uri: &str, body: &str) -> anyhow::Result<String> {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body.to_string()))?;
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status();
    let bytes = resp.into_body().collect().await?.to_bytes();
    Ok(format!("{status} {}", String::from_utf8_lossy(&bytes)))
}

fn jsonl<T>(items: &[T], wire: impl Fn(&T) -> serde_json::Value) -> String {
    items.iter().map(|i| wire(i).to_string() + "\n").collect()
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let data = tempfile::tempdir()?;
    let g = generate(3, &Profile { streets: 1, posts_per_street: 2, months: 1, ..Profile::default() })?;
    let registry = PostRegistry::new(g.posts.clone())?;

    let (service, _) = Service::open(g.config.clone(), registry.clone(), data.path())?;
    let app = router(Arc::new(service), Engines::default());

    let radar = jsonl(&g.radar, |r| r.to_wire());
    let peds = jsonl(&g.pedestrians, |p| p.to_wire());
    println!("{}", call(&app, Method::POST, "/ingest/radar", &radar).await?);
    println!("{}", call(&app, Method::POST, "/ingest/pedestrians", &peds).await?);

    let bad = r#"{"name":"oops","text":"avg_speed >> 5 -> danger"}"#;
    println!("{}", call(&app, Method::POST, "/rules", bad).await?);
    let good = r#"{"name":"fast","text":"avg_speed > 45 -> warning"}"#;
    println!("{}", call(&app, Method::POST, "/rules", good).await?);
    let v = call(&app, Method::GET, "/violations?post_id=s1-p1&from=2023-03-06T00:00:00Z&to=2023-03-07T00:00:00Z", "").await?;
    println!("{}...", &v[..v.len().min(300)]);

    println!("{}", call(&app, Method::POST, "/energy/train", r#"{"to":"2023-03-25T00:00:00Z"}"#).await?);
    let f = call(&app, Method::GET, "/energy/forecast?street_id=street-a", "").await?;
    println!("{}...", &f[..f.len().min(300)]);
    println!("{}", call(&app, Method::GET, "/energy/recommendations?street_id=street-a&date=2023-03-10&dim_level=0.5", "").await?);

    // a restart replays the log into the same state
    drop(app);
    let (again, recovered) = Service::open(g.config, registry, data.path())?;
    println!("recovered {} records, last seq {}", recovered.records.len(), again.snapshot().last_seq);
    Ok(())
}
